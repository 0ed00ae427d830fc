import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.linalg import expm

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# Pauli matrices in Stokes order (s1, s2, s3) = (Z, X, Y)
SIGMA = (
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def jones_operator(axis, angle):
    """exp(-i angle/2 n.sigma), computed by matrix exponential."""
    n = np.asarray(axis, dtype=float)
    return expm(-0.5j * angle * sum(c * s for c, s in zip(n, SIGMA)))


def stokes_of(psi):
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.array([np.real(psi.conj() @ s @ psi) for s in SIGMA])


def random_unit(rng, n=3):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_density_matrix(rng, rank=4):
    g = rng.standard_normal((4, rank)) + 1j * rng.standard_normal((4, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


# acceptance outcomes, one line per criterion, printed at the end of the run
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    prev = ACCEPTANCE.get(number)
    ok = ok and (prev is None or prev[0])
    details = detail if prev is None else f"{prev[1]}; {detail}"
    ACCEPTANCE[number] = (ok, details)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

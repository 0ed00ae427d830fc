"""Polarization and two-photon state calculus.

Conventions
-----------
Jones vectors are written in the (H, V) basis.  Stokes components are

    s1 = |E_H|^2 - |E_V|^2          (+1 for H)
    s2 = 2 Re(conj(E_H) E_V)        (+1 for D = (H + V)/sqrt2)
    s3 = 2 Im(conj(E_H) E_V)        (+1 for R = (H + iV)/sqrt2)

so that s_k = psi^dag sigma_k psi with sigma = (Z, X, Y).  This ordering is
cyclic, hence the usual SU(2) -> SO(3) correspondence holds: the Jones operator

    U = cos(a/2) I - i sin(a/2) (n . sigma)

rotates every Stokes vector by +a (right hand rule) about the unit axis n.

Rotations are stored as unit quaternions ``(w, x, y, z)`` with ``w >= 0``;
the sign ambiguity of U is the global phase that is quotiented out.

Two-photon states are 4x4 density matrices in the order (HH, HV, VH, VV);
the first factor is the exciton (X) photon, the second the biexciton (XX)
photon.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError

UNIT_TOL = 1e-12
STATE_TOL = 1e-12
EIG_TOL = 1e-10

SQRT1_2 = 1.0 / math.sqrt(2.0)

PAULI = (
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
)


def _check_unit(v, name="vector", tol=UNIT_TOL):
    n2 = float(np.dot(v, v))
    if not math.isfinite(n2) or abs(n2 - 1.0) > tol:
        raise DomainError(f"{name} must be unit norm, |v|^2 = {n2!r}")


@dataclass(frozen=True)
class StokesVector:
    """Fully polarized state on the Poincare sphere."""

    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        _check_unit(self.as_array(), "StokesVector")

    @classmethod
    def from_array(cls, v, normalize=False) -> "StokesVector":
        v = np.asarray(v, dtype=float).reshape(3)
        if normalize:
            n = np.linalg.norm(v)
            if n == 0:
                raise DomainError("cannot normalize the zero vector")
            v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_jones(cls, jones) -> "StokesVector":
        return cls.from_array(jones_to_stokes(jones), normalize=True)

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    def jones(self) -> np.ndarray:
        return stokes_to_jones(self.as_array())

    def dot(self, other: "StokesVector") -> float:
        return self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3

    def angle_to(self, other: "StokesVector") -> float:
        """Great-circle angle on the Poincare sphere, radians."""
        return math.acos(max(-1.0, min(1.0, self.dot(other))))

    def __neg__(self):
        return StokesVector(-self.s1, -self.s2, -self.s3)


H = StokesVector(1.0, 0.0, 0.0)
V = StokesVector(-1.0, 0.0, 0.0)
D = StokesVector(0.0, 1.0, 0.0)
A = StokesVector(0.0, -1.0, 0.0)
R = StokesVector(0.0, 0.0, 1.0)
L = StokesVector(0.0, 0.0, -1.0)


def jones_to_stokes(jones) -> np.ndarray:
    """Normalized Stokes 3-vector of a Jones vector (or array of them, last axis 2)."""
    j = np.asarray(jones, dtype=complex)
    eh, ev = j[..., 0], j[..., 1]
    i0 = np.abs(eh) ** 2 + np.abs(ev) ** 2
    c = np.conj(eh) * ev
    s = np.stack([np.abs(eh) ** 2 - np.abs(ev) ** 2, 2 * c.real, 2 * c.imag], axis=-1)
    return s / i0[..., None]


def stokes_to_jones(s) -> np.ndarray:
    """A Jones vector (global phase chosen so E_H is real and >= 0) for a unit Stokes vector."""
    s1, s2, s3 = (float(x) for x in np.asarray(s, dtype=float).reshape(3))
    theta = math.atan2(math.hypot(s2, s3), s1)
    phi = math.atan2(s3, s2)
    return np.array([math.cos(theta / 2), math.sin(theta / 2) * complex(math.cos(phi), math.sin(phi))])


# --- quaternion helpers (w, x, y, z) -------------------------------------------------


def quat_mul(q1, q2):
    """Hamilton product; the rotation q1*q2 applies q2 first."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quat_normalize(q):
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if w < 0:
        n = -n
    return (w / n, x / n, y / n, z / n)


def quat_from_axis_angle(axis, angle):
    h = 0.5 * angle
    s = math.sin(h)
    return quat_normalize((math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s))


def quat_from_rotvec(v):
    """Quaternion for a rotation vector (axis times angle)."""
    v = np.asarray(v, dtype=float)
    a = float(np.linalg.norm(v))
    if a < 1e-300:
        return (1.0, 0.0, 0.0, 0.0)
    return quat_from_axis_angle(v / a, a)


def quat_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_jones(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([[complex(w, -x), complex(-z, -y)], [complex(z, -y), complex(w, x)]])


@dataclass(frozen=True)
class PolRotation:
    """Rotation of the Poincare sphere (SU(2) Jones operator up to global phase).

    ``a @ b`` is the composition that applies ``b`` first.
    """

    q: tuple = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(tuple(float(c) for c in self.q)))

    @classmethod
    def identity(cls) -> "PolRotation":
        return cls()

    @classmethod
    def from_rotvec(cls, v) -> "PolRotation":
        return cls(quat_from_rotvec(v))

    @classmethod
    def random(cls, rng) -> "PolRotation":
        """Haar-random rotation."""
        g = rng.standard_normal(4)
        return cls(tuple(g / np.linalg.norm(g)))

    @property
    def angle(self) -> float:
        w = min(1.0, self.q[0])
        v = math.sqrt(self.q[1] ** 2 + self.q[2] ** 2 + self.q[3] ** 2)
        return 2.0 * math.atan2(v, w)

    @property
    def axis(self) -> StokesVector:
        v = np.array(self.q[1:])
        n = np.linalg.norm(v)
        if n < 1e-15:
            return H
        return StokesVector.from_array(v / n, normalize=True)

    def rotvec(self) -> np.ndarray:
        v = np.array(self.q[1:])
        n = np.linalg.norm(v)
        if n < 1e-300:
            return np.zeros(3)
        return v / n * self.angle

    def matrix(self) -> np.ndarray:
        return quat_matrix(self.q)

    def jones(self) -> np.ndarray:
        return quat_jones(self.q)

    def inverse(self) -> "PolRotation":
        w, x, y, z = self.q
        return PolRotation((w, -x, -y, -z))

    def __matmul__(self, other: "PolRotation") -> "PolRotation":
        return PolRotation(quat_mul(self.q, other.q))

    def then(self, other: "PolRotation") -> "PolRotation":
        """Apply ``self`` first, then ``other``."""
        return other @ self

    def apply(self, s):
        """Rotate a StokesVector (returns StokesVector) or raw array(s) of shape (..., 3)."""
        if isinstance(s, StokesVector):
            return StokesVector.from_array(self.matrix() @ s.as_array(), normalize=True)
        return np.asarray(s, dtype=float) @ self.matrix().T

    def is_close(self, other: "PolRotation", atol=1e-10) -> bool:
        return (self.inverse() @ other).angle <= atol


def rotation_about_axis(axis, angle: float) -> PolRotation:
    """Rotation by ``angle`` radians about a unit Stokes axis."""
    a = axis.as_array() if isinstance(axis, StokesVector) else np.asarray(axis, dtype=float)
    _check_unit(a, "rotation axis", tol=1e-9)
    return PolRotation(quat_from_axis_angle(a, angle))


def projection_eta(state, basis_axis) -> float:
    """Normalized power-meter contrast (P1 - P2)/(P1 + P2) of ``state`` along ``basis_axis``.

    P1 and P2 are the ideal PBS port powers for unit input power; the result
    equals the Stokes dot product.
    """
    s = state.as_array() if isinstance(state, StokesVector) else np.asarray(state, dtype=float)
    b = basis_axis.as_array() if isinstance(basis_axis, StokesVector) else np.asarray(basis_axis, dtype=float)
    _check_unit(s, "state", tol=1e-9)
    _check_unit(b, "basis axis", tol=1e-9)
    c = float(np.dot(s, b))
    p1 = 0.5 * (1.0 + c)
    p2 = 0.5 * (1.0 - c)
    return (p1 - p2) / (p1 + p2)


# --- two-photon states ----------------------------------------------------------------


class Arm(enum.Enum):
    X = "X"
    XX = "XX"


@dataclass(frozen=True, eq=False)
class TwoPhotonState:
    """Density matrix over {H,V} x {H,V}, order (HH, HV, VH, VV), X photon first."""

    rho: np.ndarray

    def __post_init__(self):
        m = np.array(self.rho, dtype=complex)
        if m.shape != (4, 4):
            raise DomainError(f"density matrix must be 4x4, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > STATE_TOL:
            raise DomainError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > STATE_TOL or abs(np.trace(m).imag) > STATE_TOL:
            raise DomainError("density matrix trace differs from 1")
        if np.linalg.eigvalsh(m).min() < -EIG_TOL:
            raise DomainError("density matrix has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "rho", m)

    @classmethod
    def pure(cls, psi) -> "TwoPhotonState":
        psi = np.asarray(psi, dtype=complex).reshape(4)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.rho)

    def allclose(self, other: "TwoPhotonState", atol=1e-10) -> bool:
        return bool(np.allclose(self.rho, other.rho, atol=atol, rtol=0))


PHI_PLUS_VEC = np.array([SQRT1_2, 0, 0, SQRT1_2], dtype=complex)
PHI_MINUS_VEC = np.array([SQRT1_2, 0, 0, -SQRT1_2], dtype=complex)
PSI_PLUS_VEC = np.array([0, SQRT1_2, SQRT1_2, 0], dtype=complex)
PSI_MINUS_VEC = np.array([0, SQRT1_2, -SQRT1_2, 0], dtype=complex)
BELL_VECTORS = (PHI_PLUS_VEC, PHI_MINUS_VEC, PSI_PLUS_VEC, PSI_MINUS_VEC)

PHI_PLUS = TwoPhotonState.pure(PHI_PLUS_VEC)
PHI_MINUS = TwoPhotonState.pure(PHI_MINUS_VEC)
MAXIMALLY_MIXED = TwoPhotonState(np.eye(4) / 4)


def werner_state(p: float) -> TwoPhotonState:
    """p |Phi+><Phi+| + (1 - p) I/4."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"Werner weight must lie in [0, 1], got {p}")
    return TwoPhotonState(p * PHI_PLUS.rho + (1 - p) * np.eye(4) / 4)


def bell_diagonal_state(weights: Iterable[float]) -> TwoPhotonState:
    """Mixture of (Phi+, Phi-, Psi+, Psi-) with the given weights."""
    w = np.asarray(list(weights), dtype=float)
    if w.shape != (4,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise DomainError("Bell-diagonal weights must be 4 non-negative numbers summing to 1")
    rho = sum(wk * np.outer(b, b.conj()) for wk, b in zip(w, BELL_VECTORS))
    return TwoPhotonState(rho)


def apply_rotation_one_arm(rho: TwoPhotonState, r: PolRotation, arm) -> TwoPhotonState:
    """Conjugate the state by the Jones operator of ``r`` acting on one photon."""
    arm = Arm(arm) if not isinstance(arm, Arm) else arm
    u = r.jones()
    op = np.kron(np.eye(2), u) if arm is Arm.XX else np.kron(u, np.eye(2))
    out = op @ rho.rho @ op.conj().T
    out = 0.5 * (out + out.conj().T)
    return TwoPhotonState(out / np.trace(out).real)


def fidelity_to_phi_plus(rho: TwoPhotonState) -> float:
    return float(np.real(PHI_PLUS_VEC.conj() @ rho.rho @ PHI_PLUS_VEC))


class Basis(enum.IntEnum):
    """Detection bases. Port 0 projects on the first state of the pair, port 1 on its partner."""

    HV = 0
    DA = 1
    RL = 2

    @property
    def vectors(self):
        return BASIS_JONES[self]

    @property
    def axis(self) -> StokesVector:
        return (H, D, R)[self]

    def projectors(self):
        return tuple(np.outer(v, v.conj()) for v in self.vectors)


BASIS_JONES = {
    Basis.HV: (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    Basis.DA: (np.array([SQRT1_2, SQRT1_2], dtype=complex), np.array([SQRT1_2, -SQRT1_2], dtype=complex)),
    Basis.RL: (np.array([SQRT1_2, 1j * SQRT1_2]), np.array([SQRT1_2, -1j * SQRT1_2])),
}

# BASIS_VECTORS[b, port] -> Jones vector, shape (3, 2, 2)
BASIS_VECTORS = np.array([[BASIS_JONES[b][0], BASIS_JONES[b][1]] for b in Basis])


def outcome_probabilities(rho: TwoPhotonState, basis_x, basis_xx=None) -> np.ndarray:
    """Joint port probabilities [p00, p01, p10, p11] (X port, XX port)."""
    basis_xx = basis_x if basis_xx is None else basis_xx
    out = np.empty(4)
    for i, a in enumerate(Basis(basis_x).vectors):
        for j, b in enumerate(Basis(basis_xx).vectors):
            v = np.kron(a, b)
            out[2 * i + j] = np.real(v.conj() @ rho.rho @ v)
    return out


def ideal_contrasts(rho: TwoPhotonState):
    """Exact correlation contrasts (C_HV, C_DA, C_RL): P(co) - P(cross) per basis."""
    out = []
    for b in Basis:
        p = outcome_probabilities(rho, b)
        co, cross = p[0] + p[3], p[1] + p[2]
        out.append((co - cross) / (co + cross))
    return tuple(out)


def fidelity_from_contrasts(c_hv: float, c_da: float, c_rl: float) -> float:
    return (1.0 + c_hv + c_da - c_rl) / 4.0


def bell_twirl(rho: TwoPhotonState) -> TwoPhotonState:
    """Project onto the Bell-diagonal part (dephasing in the Bell basis)."""
    w = [float(np.real(b.conj() @ rho.rho @ b)) for b in BELL_VECTORS]
    w = np.clip(w, 0, None)
    return bell_diagonal_state(w / w.sum())

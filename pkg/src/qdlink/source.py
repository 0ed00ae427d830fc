"""Quantum-dot entangled pair source.

The biexciton photon (XX) is emitted first; the exciton photon (X) follows
after an exponentially distributed delay set by the exciton lifetime.  The
fine-structure splitting S puts a phase S*tau/hbar between the HH and VV
decay paths, so the pair state depends on the delay tau.

The defaults ``fss_energy_uev = 2`` and ``x_lifetime_ps = 600`` are not
measured values; they only put the cascade and the fidelity oscillation on
ps/ns scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import constants

from .errors import DomainError
from .polarization import TwoPhotonState

HBAR_EV_S = constants.hbar / constants.e
H_EV_S = 2 * math.pi * HBAR_EV_S
PS_PER_S = 1_000_000_000_000


@dataclass(frozen=True)
class SourceParams:
    pair_rate: float = 1000.0  # pairs / s
    x_lifetime_ps: float = 600.0
    fss_energy_uev: float = 2.0
    mixing_p: float = 1.0
    x_wavelength_nm: float = 1329.4
    xx_wavelength_nm: float = 1320.0

    def __post_init__(self):
        if not self.pair_rate >= 0:
            raise DomainError("pair_rate must be >= 0")
        if not self.x_lifetime_ps > 0:
            raise DomainError("x_lifetime_ps must be > 0")
        if not 0.0 <= self.mixing_p <= 1.0:
            raise DomainError("mixing_p must lie in [0, 1]")

    @property
    def fss_angular_frequency(self) -> float:
        """S / hbar in rad per picosecond."""
        return self.fss_energy_uev * 1e-6 / HBAR_EV_S / PS_PER_S

    @property
    def oscillation_period_ps(self) -> float:
        """h / S; infinite without splitting."""
        if self.fss_energy_uev == 0:
            return math.inf
        return H_EV_S / (self.fss_energy_uev * 1e-6) * PS_PER_S


def fss_phase(params: SourceParams, tau_ps):
    return params.fss_angular_frequency * np.asarray(tau_ps, dtype=float)


def pair_state_at_delay(params: SourceParams, tau: float) -> TwoPhotonState:
    """Werner mixture of (|HH> + e^{i phi}|VV>)/sqrt2, phi = S tau / hbar, weight mixing_p."""
    if tau < 0:
        raise DomainError(f"delay must be non-negative, got {tau}")
    phi = float(fss_phase(params, tau))
    psi = np.array([1, 0, 0, complex(math.cos(phi), math.sin(phi))]) / math.sqrt(2)
    p = params.mixing_p
    rho = p * np.outer(psi, psi.conj()) + (1 - p) * np.eye(4) / 4
    return TwoPhotonState(rho)


def mean_pure_fidelity(params: SourceParams) -> float:
    """Average of (1 + cos phi)/2 over the exponential delay distribution."""
    wt = params.fss_angular_frequency * params.x_lifetime_ps
    return 0.5 * (1 + 1 / (1 + wt * wt))


@dataclass(frozen=True)
class PairEvent:
    xx_emit_time: int  # ps
    x_emit_time: float  # ps
    state_at_emission: TwoPhotonState

    @property
    def delay_ps(self) -> float:
        return self.x_emit_time - self.xx_emit_time


@dataclass(frozen=True, eq=False)
class PairStream:
    """Columnar pair stream sorted by XX emission time.

    ``xx_emit_ps`` holds integer picoseconds; ``delay_ps`` the cascade delay.
    Iterating yields :class:`PairEvent` objects.
    """

    params: SourceParams
    xx_emit_ps: np.ndarray
    delay_ps: np.ndarray

    def __len__(self):
        return len(self.xx_emit_ps)

    @property
    def x_emit_ps(self) -> np.ndarray:
        return self.xx_emit_ps + self.delay_ps

    @property
    def phase(self) -> np.ndarray:
        return fss_phase(self.params, self.delay_ps)

    def __getitem__(self, i) -> PairEvent:
        t = int(self.xx_emit_ps[i])
        tau = float(self.delay_ps[i])
        return PairEvent(t, t + tau, pair_state_at_delay(self.params, tau))

    def __iter__(self) -> Iterator[PairEvent]:
        for i in range(len(self)):
            yield self[i]

    def equals(self, other: "PairStream") -> bool:
        return np.array_equal(self.xx_emit_ps, other.xx_emit_ps) and np.array_equal(
            self.delay_ps, other.delay_ps
        )


def poisson_times_ps(rng, rate: float, t_start: float, t_end: float) -> np.ndarray:
    """Sorted integer-ps event times of a homogeneous Poisson process on [t_start, t_end) s."""
    n = rng.poisson(rate * (t_end - t_start)) if rate > 0 and t_end > t_start else 0
    start = int(round(t_start * PS_PER_S))
    span = int(round(t_end * PS_PER_S)) - start
    if n == 0 or span <= 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.floor(rng.random(n) * span).astype(np.int64)
    offs.sort()
    return start + offs


def _as_rng(rng_seed):
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def emit_pairs(params: SourceParams, t_start: float, t_end: float, rng_seed=None) -> PairStream:
    """Pairs emitted in [t_start, t_end) seconds under CW excitation."""
    if t_end < t_start:
        raise DomainError("t_end must not precede t_start")
    rng = _as_rng(rng_seed)
    t = poisson_times_ps(rng, params.pair_rate, t_start, t_end)
    tau = rng.exponential(params.x_lifetime_ps, size=len(t))
    return PairStream(params, t, tau)


def calibrate_mixing_for_local_fidelity(target_F: float) -> float:
    """Werner weight whose zero-delay fidelity (1 + 3p)/4 equals ``target_F``."""
    if not 0.25 <= target_F <= 1.0:
        raise DomainError(f"target fidelity must lie in [0.25, 1], got {target_F}")
    return (4.0 * target_F - 1.0) / 3.0

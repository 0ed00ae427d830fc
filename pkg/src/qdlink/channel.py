"""Deployed-fiber channel: birefringence drift, wavelength decorrelation, delay and loss.

The birefringence at the reference wavelength is

    R(t) = D(t) @ W(t)

where ``W`` is an isotropic rotation random walk started from a Haar-random
rotation and ``D`` a deterministic rotation about a fixed (seeded) axis whose
angle follows a 24 h sinusoid plus a term proportional to the temperature
change.  Away from the reference wavelength a further rotation with rotation
vector ``kappa * dlambda * g(t)`` is applied; ``g`` is a 3-vector
Ornstein-Uhlenbeck process with unit stationary variance, which is the
first-order (PMD-like) frequency dependence of the fiber.  ``kappa`` is fixed
so that the ensemble mean displacement of a polarization state per nm equals
``wavelength_decorr_deg_per_nm``.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .errors import DomainError
from .polarization import (
    Arm,
    PolRotation,
    StokesVector,
    TwoPhotonState,
    apply_rotation_one_arm,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
)

C_KM_PER_S = 299_792.458
SECONDS_PER_HOUR = 3600.0
SECONDS_PER_DAY = 86400.0


def default_temperature_profile(t_s):
    """Week-long outdoor temperature in deg C: a 4-day cooling ramp with a day-night swing.

    The ramp runs from 6 to -3 C over the first 4 days and then stays flat;
    a 1 C sinusoid peaking at 14:00 (t = 0 is midnight) rides on top.
    """
    t = np.asarray(t_s, dtype=float)
    days = t / SECONDS_PER_DAY
    trend = 6.0 - 9.0 * np.clip(days, 0.0, 4.0) / 4.0
    diurnal = 1.0 * np.cos(2 * np.pi * (days - 14.0 / 24.0))
    out = trend + diurnal
    return float(out) if np.ndim(out) == 0 else out


def _default_tof_thermal():
    t = np.linspace(0.0, 4 * SECONDS_PER_DAY, 4 * 24 * 60 + 1)
    temp = default_temperature_profile(t)
    return 1820.0 / float(temp.max() - temp.min())


DEFAULT_TOF_THERMAL_PS_PER_C = _default_tof_thermal()


class CsvTemperatureProfile:
    """Two-column (time_s, temp_C) profile, linearly interpolated and clamped at the ends."""

    def __init__(self, times_s, temps_c, path=None):
        self.times = np.asarray(times_s, dtype=float)
        self.temps = np.asarray(temps_c, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 1 or self.times.shape != self.temps.shape:
            raise ValueError("temperature profile needs matching 1-D time and temperature columns")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("temperature profile times must be strictly increasing")
        self.path = path

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise
                    continue  # header line
        if not rows:
            raise ValueError(f"{path}: no temperature rows")
        t, temp = zip(*rows)
        return cls(t, temp, path=str(path))

    def __call__(self, t_s):
        out = np.interp(t_s, self.times, self.temps)
        return float(out) if np.ndim(out) == 0 else out


@functools.lru_cache(maxsize=None)
def decorrelation_scale(mean_displacement_deg: float) -> float:
    """Rotation-vector scale (rad per nm per unit of g) giving the requested mean displacement.

    The displacement of a state under a rotation of angle theta about an axis
    at polar angle psi is acos(cos^2 psi + sin^2 psi cos theta); theta is
    kappa times a chi(3) variate and cos psi is uniform on [-1, 1].
    """
    if mean_displacement_deg <= 0:
        return 0.0
    target = math.radians(mean_displacement_deg)

    r, wr = np.polynomial.legendre.leggauss(400)
    r = 5.0 * (r + 1.0)
    wr = 5.0 * wr * np.sqrt(2 / np.pi) * r * r * np.exp(-r * r / 2)
    u, wu = np.polynomial.legendre.leggauss(400)
    wu = 0.5 * wu

    def mean_disp(kappa):
        c = u[None, :] ** 2 + (1 - u[None, :] ** 2) * np.cos(kappa * r[:, None])
        return float(wr @ np.arccos(np.clip(c, -1.0, 1.0)) @ wu)

    return optimize.brentq(lambda k: mean_disp(k) - target, 1e-6, 1.5, xtol=1e-12)


@dataclass(frozen=True)
class ChannelParams:
    length_km: float = 18.23
    fiber_loss_db: float = 11.70
    component_loss_db: float = 3.49
    group_index: float = 1.4677
    drift_angle_rate: float = 0.25  # rad / sqrt(hour)
    diurnal_amplitude: float = 0.6  # rad
    diurnal_period_h: float = 24.0
    thermal_rotation_rad_per_c: float = 0.15
    wavelength_decorr_deg_per_nm: float = 20.0
    wavelength_decorr_time_h: float = 12.0
    reference_wavelength_nm: float = 1320.0
    tof_base_ps: Optional[float] = None
    tof_thermal_ps_per_c: float = DEFAULT_TOF_THERMAL_PS_PER_C
    temperature_profile: Callable = field(default=default_temperature_profile, compare=False)

    def __post_init__(self):
        for name in ("fiber_loss_db", "component_loss_db"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        for name in ("drift_angle_rate", "diurnal_amplitude", "wavelength_decorr_deg_per_nm"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.diurnal_period_h <= 0 or self.wavelength_decorr_time_h <= 0:
            raise DomainError("periods and correlation times must be > 0")

    @property
    def tof_base(self) -> float:
        """Fiber transit time at 0 C in ps."""
        if self.tof_base_ps is not None:
            return float(self.tof_base_ps)
        return self.length_km * self.group_index / C_KM_PER_S * 1e12

    def total_loss_db(self, include_component_loss=True) -> float:
        return self.fiber_loss_db + (self.component_loss_db if include_component_loss else 0.0)

    def transmission(self, include_component_loss=True) -> float:
        return db_to_transmission(self.total_loss_db(include_component_loss))


def db_to_transmission(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True, eq=False)
class ChannelState:
    sim_time: float  # s
    walk_q: tuple  # random-walk part of the birefringence, quaternion
    diurnal_axis: tuple
    diurnal_angle0: float
    offset_slope: np.ndarray  # g(t), 3-vector
    decorr_scale: float  # rad / nm per unit g
    reference_wavelength_nm: float
    rotation_at_reference_wavelength: PolRotation
    current_tof: float  # ps
    _cache: dict = field(default_factory=dict, repr=False)


def _diurnal_angle(params: ChannelParams, t_s: float) -> float:
    ph = 2 * math.pi * t_s / (params.diurnal_period_h * SECONDS_PER_HOUR)
    temp = float(params.temperature_profile(t_s))
    return params.diurnal_amplitude * math.sin(ph) + params.thermal_rotation_rad_per_c * temp


def _compose_state(params, t, walk_q, axis, angle0, g):
    d = quat_from_axis_angle(axis, _diurnal_angle(params, t) - angle0)
    rot = PolRotation(quat_mul(d, walk_q))
    tof = params.tof_base + params.tof_thermal_ps_per_c * float(params.temperature_profile(t))
    return ChannelState(
        sim_time=t,
        walk_q=walk_q,
        diurnal_axis=axis,
        diurnal_angle0=angle0,
        offset_slope=g,
        decorr_scale=decorrelation_scale(params.wavelength_decorr_deg_per_nm),
        reference_wavelength_nm=params.reference_wavelength_nm,
        rotation_at_reference_wavelength=rot,
        current_tof=tof,
    )


def _random_unit(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def initial_channel_state(params: ChannelParams, rng, t0: float = 0.0, randomize=True) -> ChannelState:
    """Channel at time ``t0``; with ``randomize`` the birefringence starts Haar-random."""
    if randomize:
        walk_q = PolRotation.random(rng).q
        axis = tuple(_random_unit(rng))
        g = rng.standard_normal(3)
    else:
        walk_q, axis, g = (1.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0), np.zeros(3)
    angle0 = _diurnal_angle(params, t0)
    return _compose_state(params, t0, walk_q, axis, angle0, g)


def advance(state: ChannelState, dt: float, params: ChannelParams, rng) -> ChannelState:
    """Evolve the channel by ``dt`` seconds."""
    if dt < 0:
        raise DomainError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return state
    dt_h = dt / SECONDS_PER_HOUR
    walk_q = state.walk_q
    if params.drift_angle_rate > 0:
        angle = abs(rng.normal(0.0, params.drift_angle_rate * math.sqrt(dt_h)))
        step = quat_from_axis_angle(_random_unit(rng), angle)
        walk_q = quat_normalize(quat_mul(step, walk_q))
    decay = math.exp(-dt_h / params.wavelength_decorr_time_h)
    g = state.offset_slope * decay + math.sqrt(1 - decay * decay) * rng.standard_normal(3)
    return _compose_state(
        params, state.sim_time + dt, walk_q, state.diurnal_axis, state.diurnal_angle0, g
    )


def offset_rotation(state: ChannelState, wavelength_nm: float) -> PolRotation:
    dl = wavelength_nm - state.reference_wavelength_nm
    return PolRotation.from_rotvec(state.decorr_scale * dl * state.offset_slope)


def birefringence_at(state: ChannelState, wavelength_nm: float) -> PolRotation:
    """Channel rotation seen at ``wavelength_nm``."""
    if wavelength_nm == state.reference_wavelength_nm:
        return state.rotation_at_reference_wavelength
    key = float(wavelength_nm)
    rot = state._cache.get(key)
    if rot is None:
        rot = state.rotation_at_reference_wavelength @ offset_rotation(state, wavelength_nm)
        state._cache[key] = rot
    return rot


def time_of_flight(state: ChannelState) -> float:
    return state.current_tof


@dataclass(frozen=True)
class Photon:
    emit_time_ps: int
    wavelength_nm: float
    arm: Arm
    state: Optional[TwoPhotonState] = None
    arrival_time_ps: Optional[int] = None


@dataclass(frozen=True)
class ReferencePulse:
    emit_time_ps: int
    wavelength_nm: float
    stokes: StokesVector
    arrival_time_ps: Optional[int] = None


def transit(state: ChannelState, item, params: ChannelParams, rng, include_component_loss=True):
    """Send one photon or reference pulse through the fiber; ``None`` if it is lost."""
    if rng.random() >= params.transmission(include_component_loss):
        return None
    arrival = int(item.emit_time_ps + round(state.current_tof))
    rot = birefringence_at(state, item.wavelength_nm)
    if isinstance(item, ReferencePulse):
        return replace(item, stokes=rot.apply(item.stokes), arrival_time_ps=arrival)
    new_state = None if item.state is None else apply_rotation_one_arm(item.state, rot, item.arm)
    return replace(item, state=new_state, arrival_time_ps=arrival)


def survival_mask(n: int, transmission: float, rng) -> np.ndarray:
    """Independent Bernoulli survival for ``n`` items."""
    return rng.random(n) < transmission

"""Two-reference polarization stabilization with time-division multiplexing.

Geometry: the fiber wave plate (FWP) is the last actuator before the
reference analyzers and rotates about ``fwp_axis``.  Analyzer a looks along
that axis, analyzer b along an axis in the FWP rotation plane, so driving the
FWP never changes eta_a.  The electronic polarization controller (EPC) is
four variable retarders whose axes alternate s1, s2, s1, s2.

Actuator order seen by the light: channel, EPC channels 1..4, FWP.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelState, birefringence_at
from .errors import DomainError, MeasurementError
from .polarization import (
    H,
    R,
    PolRotation,
    StokesVector,
    quat_from_axis_angle,
    quat_matrix,
    quat_mul,
)

log = logging.getLogger(__name__)

# Worst case of the lock at eta >= 0.985 on two orthogonal references, from
# scripts/lock_bound.py (randomized search + constrained polish, 2e6 samples).
LOCK_THRESHOLD = 0.985
LOCK_ANGLE_BOUND_RAD = 0.2455656
LOCK_FIDELITY_PENALTY_BOUND = 0.0150000


@dataclass(frozen=True)
class ReferencePair:
    ref_a: StokesVector
    ref_b: StokesVector
    target_basis_a: StokesVector
    target_basis_b: StokesVector
    wavelength_nm: float = 1320.0

    def __post_init__(self):
        if abs(self.ref_a.dot(self.ref_b)) > 1e-10:
            raise DomainError("references must be Stokes-orthogonal")
        if abs(self.target_basis_a.dot(self.target_basis_b)) > 1e-10:
            raise DomainError("target bases must be Stokes-orthogonal")

    def locked_rotation(self) -> PolRotation:
        """The unique rotation taking (ref_a, ref_b) onto (target_a, target_b)."""
        return _frame_rotation(self.ref_a, self.ref_b, self.target_basis_a, self.target_basis_b)


def _frame(a: StokesVector, b: StokesVector) -> np.ndarray:
    a, b = a.as_array(), b.as_array()
    return np.column_stack([a, b, np.cross(a, b)])


def _frame_rotation(a0, b0, a1, b1) -> PolRotation:
    from scipy.spatial.transform import Rotation

    m = _frame(a1, b1) @ _frame(a0, b0).T
    x, y, z, w = Rotation.from_matrix(m).as_quat()
    return PolRotation((w, x, y, z))


def calibrate_geometry(fwp_axis=R):
    """Target analyzer axes: a on the FWP axis, b in the FWP rotation plane."""
    a = fwp_axis if isinstance(fwp_axis, StokesVector) else StokesVector.from_array(fwp_axis)
    av = a.as_array()
    # any vector orthogonal to the axis; prefer the s1 direction projected into the plane
    seed = np.array([1.0, 0.0, 0.0]) if abs(av[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b = seed - np.dot(seed, av) * av
    return a, StokesVector.from_array(b, normalize=True)


def generate_references(fwp_axis=R, wavelength_nm: float = 1320.0) -> ReferencePair:
    """Two orthogonal references launched along the calibrated analyzer axes.

    With the default FWP axis R this is one circular (after the QWP) and one
    linear (H) reference.
    """
    ta, tb = calibrate_geometry(fwp_axis)
    return ReferencePair(ta, tb, ta, tb, wavelength_nm)


@dataclass(frozen=True)
class ActuatorConfig:
    epc_axes: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    epc_gain_rad_per_v: tuple = (0.5, 0.5, 0.5, 0.5)
    fwp_axis: tuple = (0.0, 0.0, 1.0)
    fwp_gain_rad_per_v: float = 0.5
    v_min: float = -40.0
    v_max: float = 40.0


@dataclass(frozen=True)
class ActuatorState:
    epc_voltages: tuple = (0.0, 0.0, 0.0, 0.0)
    fwp_voltage: float = 0.0
    config: ActuatorConfig = field(default_factory=ActuatorConfig)

    def __post_init__(self):
        vs = tuple(float(v) for v in self.epc_voltages)
        if len(vs) != 4:
            raise DomainError("EPC has exactly four channels")
        object.__setattr__(self, "epc_voltages", vs)
        object.__setattr__(self, "fwp_voltage", float(self.fwp_voltage))
        c = self.config
        for v in vs + (self.fwp_voltage,):
            if not c.v_min <= v <= c.v_max:
                raise DomainError(f"voltage {v} outside [{c.v_min}, {c.v_max}]")

    @property
    def voltages(self) -> tuple:
        """(epc_v1, epc_v2, epc_v3, epc_v4, fwp_v)."""
        return self.epc_voltages + (self.fwp_voltage,)

    def with_voltage(self, channel: int, v: float) -> "ActuatorState":
        """Set channel 0..3 (EPC) or 4 (FWP), clamped to range."""
        c = self.config
        v = min(c.v_max, max(c.v_min, v))
        if channel == 4:
            return replace(self, fwp_voltage=v)
        vs = list(self.epc_voltages)
        vs[channel] = v
        return replace(self, epc_voltages=tuple(vs))

    def epc_quat(self):
        q = (1.0, 0.0, 0.0, 0.0)
        for axis, gain, v in zip(self.config.epc_axes, self.config.epc_gain_rad_per_v, self.epc_voltages):
            q = quat_mul(quat_from_axis_angle(axis, gain * v), q)
        return q

    def fwp_quat(self):
        return quat_from_axis_angle(self.config.fwp_axis, self.config.fwp_gain_rad_per_v * self.fwp_voltage)

    def rotation(self) -> PolRotation:
        """Combined actuator rotation, FWP applied last."""
        return PolRotation(quat_mul(self.fwp_quat(), self.epc_quat()))


def actuator_rotation(actuators: ActuatorState) -> PolRotation:
    return actuators.rotation()


@dataclass(frozen=True)
class StabilizerSchedule:
    check_period: float = 60.0
    check_duration: float = 0.5
    eta_threshold: float = 0.985
    forced_realign_period: float = 660.0
    actuation_step_latency: float = 1.2
    realign_target: float = 0.995
    max_steps: int = 4000
    step_levels_rad: tuple = (0.16, 0.04, 0.01)

    def __post_init__(self):
        for name in ("check_period", "check_duration", "forced_realign_period", "actuation_step_latency"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be > 0")
        if not 0 < self.eta_threshold <= 1:
            raise DomainError("eta_threshold must lie in (0, 1]")
        if self.check_duration >= self.check_period:
            raise DomainError("check_duration must be shorter than check_period")


# --- measurement -------------------------------------------------------------------------


def _channel_rotation(channel, wavelength_nm):
    if isinstance(channel, ChannelState):
        return birefringence_at(channel, wavelength_nm)
    if channel is None:
        return PolRotation.identity()
    return channel


def _noisy_eta(c: float, noise: float, rng) -> float:
    p1 = 0.5 * (1.0 + c)
    p2 = 0.5 * (1.0 - c)
    if noise > 0:
        e1, e2 = rng.normal(0.0, noise, 2)
        p1 = max(0.0, p1 * (1.0 + e1))
        p2 = max(0.0, p2 * (1.0 + e2))
    total = p1 + p2
    if total <= 0:
        raise MeasurementError("both power meters read zero")
    return (p1 - p2) / total


def measure_projection(ref: StokesVector, target: StokesVector, channel, actuators: ActuatorState,
                       meter_noise_rel: float = 0.0, rng=None, wavelength_nm: float = 1320.0) -> float:
    """eta of one reference after the channel and actuators, on the power meters of ``target``.

    ``channel`` is a ChannelState (evaluated at ``wavelength_nm``) or a PolRotation.
    """
    rot = actuators.rotation() @ _channel_rotation(channel, wavelength_nm)
    c = float(target.as_array() @ (rot.matrix() @ ref.as_array()))
    c = max(-1.0, min(1.0, c))
    return _noisy_eta(c, meter_noise_rel, rng)


class _Meter:
    """Both-reference measurement for a fixed channel rotation."""

    def __init__(self, refs: ReferencePair, channel_rot: PolRotation, noise: float, rng):
        self.ra = refs.ref_a.as_array()
        self.rb = refs.ref_b.as_array()
        self.ta = refs.target_basis_a.as_array()
        self.tb = refs.target_basis_b.as_array()
        self.cq = channel_rot.q
        self.noise = noise
        self.rng = rng

    def true_etas(self, act: ActuatorState):
        m = quat_matrix(quat_mul(act.rotation().q, self.cq))
        return float(self.ta @ m @ self.ra), float(self.tb @ m @ self.rb)

    def __call__(self, act: ActuatorState):
        ca, cb = self.true_etas(act)
        return _noisy_eta(ca, self.noise, self.rng), _noisy_eta(cb, self.noise, self.rng)


# --- scheduling --------------------------------------------------------------------------


class Decision(enum.Enum):
    NO_ACTION = "no_action"
    START_RECOVERY = "start_recovery"
    FORCED_REALIGN = "forced_realign"


def check_cycle(schedule: StabilizerSchedule, clock: float, last_check_results: Sequence[float],
                last_realign_time: float) -> Decision:
    """Decide what follows a reference check at time ``clock``.

    The forced realignment wins when both apply: it maximizes the alignment
    and so also clears the threshold.
    """
    if clock - last_realign_time >= schedule.forced_realign_period:
        return Decision.FORCED_REALIGN
    if min(last_check_results) < schedule.eta_threshold:
        return Decision.START_RECOVERY
    return Decision.NO_ACTION


# --- event log ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogRecord:
    time: float
    kind: str  # check | recovery | realign | transmission | step
    duration: float
    eta_a: float = math.nan
    eta_b: float = math.nan
    voltages: tuple = ()


@dataclass
class StabilizerEventLog:
    records: list = field(default_factory=list)

    def append(self, rec: LogRecord):
        if rec.duration < 0:
            raise ValueError("negative duration")
        if self.records and rec.time < self.records[-1].time - 1e-9:
            raise ValueError("log times must be non-decreasing")
        self.records.append(rec)

    def of_kind(self, *kinds):
        return [r for r in self.records if r.kind in kinds]

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class RecoveryResult:
    steps: int
    duration: float
    eta_a: float
    eta_b: float
    actuators: ActuatorState
    success: bool
    mode: str = "recovery"


def recover(actuators: ActuatorState, channel, refs: ReferencePair, schedule: StabilizerSchedule,
            rng=None, meter_noise_rel: float = 0.0, mode: str = "recovery",
            log: Optional[StabilizerEventLog] = None, t_start: float = 0.0) -> RecoveryResult:
    """Derivative-free recovery of both references.

    Each refinement level runs a line search on the FWP voltage for eta_b
    (eta_a is FWP-invariant) followed by a cyclic coordinate search over the
    four EPC voltages on min(eta_a, eta_b).  Levels coarser than the present
    misalignment acos(min eta) are skipped.  Every trial actuation costs one
    step of ``actuation_step_latency``.  ``mode="recovery"`` stops as soon as
    both projections clear the threshold; ``mode="realign"`` keeps going until
    both exceed ``realign_target`` or the finest level stalls.
    """
    if mode not in ("recovery", "realign"):
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    meter = _Meter(refs, _channel_rotation(channel, refs.wavelength_nm), meter_noise_rel, rng)
    target = schedule.eta_threshold if mode == "recovery" else schedule.realign_target
    cfg = actuators.config
    gains = tuple(cfg.epc_gain_rad_per_v) + (cfg.fwp_gain_rad_per_v,)

    cur = actuators
    eta = meter(cur)
    steps = 0

    def done(e):
        return e[0] >= target and e[1] >= target

    def objective(e, channel):
        return e[1] if channel == 4 else min(e)

    def line_search(channel, dv):
        nonlocal cur, eta, steps
        moved = False
        for direction in (1.0, -1.0):
            while steps < schedule.max_steps and not done(eta):
                v = cur.voltages[channel] + direction * dv
                if not cfg.v_min <= v <= cfg.v_max:
                    log_saturation(channel, v)
                    break
                trial = cur.with_voltage(channel, v)
                e = meter(trial)
                steps += 1
                if objective(e, channel) > objective(eta, channel):
                    cur, eta, moved = trial, e, True
                    if log is not None:
                        log.append(LogRecord(t_start + steps * schedule.actuation_step_latency, "step", 0.0,
                                             e[0], e[1], cur.voltages))
                else:
                    break
            if moved:
                break
        return moved

    # skip levels coarser than the present misalignment
    worst = math.acos(max(-1.0, min(1.0, min(eta))))
    levels = [s for s in schedule.step_levels_rad if s <= worst] or list(schedule.step_levels_rad[-1:])
    for step_rad in levels:
        improved = True
        while improved and not done(eta) and steps < schedule.max_steps:
            improved = line_search(4, step_rad / gains[4])
            for ch in range(4):
                if done(eta) or steps >= schedule.max_steps:
                    break
                improved |= line_search(ch, step_rad / gains[ch])
        if done(eta) or steps >= schedule.max_steps:
            break

    success = min(eta) >= schedule.eta_threshold
    if not success:
        _log_failure(mode, steps, eta)
    return RecoveryResult(steps, steps * schedule.actuation_step_latency, eta[0], eta[1], cur, success, mode)


def log_saturation(channel, v):
    log.warning("actuator channel %d saturates at %.2f V", channel, v)


def _log_failure(mode, steps, eta):
    log.warning("%s failed after %d steps: eta = (%.4f, %.4f)", mode, steps, eta[0], eta[1])


# --- duty accounting -----------------------------------------------------------------------


@dataclass(frozen=True)
class DutyStats:
    check_only_duty: float
    recovery_minute_duty: float
    overall_duty: float
    maintenance_fraction: float
    n_checks: int
    n_recoveries: int
    n_realigns: int
    mean_recovery_duration: float
    mean_realign_duration: float


def duty_cycle_report(log: StabilizerEventLog, horizon: float, check_period: float = 60.0,
                      eta_threshold: float = 0.985) -> DutyStats:
    """Duty-cycle figures from the event log over ``horizon`` seconds.

    Truth snapshots are ``transmission`` records whose eta fields hold the
    noiseless projections during that interval.
    """
    if not log.records:
        raise ValueError("empty stabilizer log")
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    busy = {"check": 0.0, "recovery": 0.0, "realign": 0.0}
    slot_busy: dict = {}
    recovery_slots = set()
    tx_total = tx_ok = 0.0
    rec_durations, realign_durations = [], []
    n_checks = 0
    for r in log.records:
        if r.kind in busy:
            busy[r.kind] += r.duration
            slot = int(math.floor(r.time / check_period + 1e-9))
            slot_busy[slot] = slot_busy.get(slot, 0.0) + r.duration
            if r.kind == "recovery":
                recovery_slots.add(slot)
                rec_durations.append(r.duration)
            elif r.kind == "realign":
                realign_durations.append(r.duration)
            else:
                n_checks += 1
        elif r.kind == "transmission":
            tx_total += r.duration
            if min(r.eta_a, r.eta_b) >= eta_threshold:
                tx_ok += r.duration
    if recovery_slots:
        rec_busy = sum(slot_busy[s] for s in recovery_slots)
        recovery_minute_duty = 1.0 - rec_busy / (check_period * len(recovery_slots))
    else:
        recovery_minute_duty = math.nan
    return DutyStats(
        check_only_duty=1.0 - busy["check"] / horizon,
        recovery_minute_duty=recovery_minute_duty,
        overall_duty=1.0 - sum(busy.values()) / horizon,
        maintenance_fraction=tx_ok / tx_total if tx_total > 0 else math.nan,
        n_checks=n_checks,
        n_recoveries=len(rec_durations),
        n_realigns=len(realign_durations),
        mean_recovery_duration=float(np.mean(rec_durations)) if rec_durations else 0.0,
        mean_realign_duration=float(np.mean(realign_durations)) if realign_durations else 0.0,
    )


def write_duty_log(log: StabilizerEventLog, path, check_period: float = 60.0):
    """duty_log.csv: slot_start_s, category, duration_s."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot_start_s", "category", "duration_s"])
        for r in log.records:
            if r.kind in ("check", "recovery", "realign", "transmission"):
                slot = math.floor(r.time / check_period + 1e-9) * check_period
                w.writerow([f"{slot:.1f}", r.kind, f"{r.duration:.6f}"])


def write_actuator_trace(rows, path):
    """actuator_trace.csv: time_s, epc_v1..epc_v4, fwp_v."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "epc_v1", "epc_v2", "epc_v3", "epc_v4", "fwp_v"])
        for t, volts in rows:
            w.writerow([f"{t:.3f}"] + [f"{v:.6f}" for v in volts])

"""Scenario event loop: source, channel, stabilizer and detectors on one clock.

Time advances in check periods (60 s slots).  Each slot opens with the
0.5 s reference check, possibly followed by a recovery or forced
realignment; the remainder carries qubits.  The channel is stepped every
``channel_step_s`` and held constant in between.

Desk-scale sampling
-------------------
Simulating every emitted pair for a week is out of reach, so the loop draws
the detection categories directly as independent Poisson processes: pairs
with both photons detected, X-only singles, XX-only singles and dark counts.
Splitting one Poisson process by independent detection outcomes yields
independent Poisson processes, so this is exact for the click record.  The
``acceleration`` factor thins the singles and dark counts only; they feed the
accidental background, which stays a small correction at the default rates.

Frames
------
The references are launched and analyzed in the frames of the source and
the receiver's analyzers, so the XX photon's effective rotation is
``L^-1 A(t) R(t)``: ``A`` the actuator rotation, ``R`` the fiber at the XX
wavelength and ``L`` the rotation that takes the references onto their
target axes (identity for the default pair).  With stabilization disabled
the initial lock is still made and the actuators are then frozen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import AnalysisResult, analyze_events, write_analysis
from .channel import advance, birefringence_at, initial_channel_state
from .coincidence import DetectionEvents, DetectorParams, PairBatch, detect
from .config import ScenarioConfig
from .eventlog import write_events
from .polarization import PolRotation, quat_jones
from .source import PS_PER_S
from .stabilizer import (
    ActuatorState,
    Decision,
    LogRecord,
    StabilizerEventLog,
    _Meter,
    check_cycle,
    duty_cycle_report,
    generate_references,
    recover,
    write_actuator_trace,
    write_duty_log,
)

log = logging.getLogger(__name__)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    events: DetectionEvents
    analysis: AnalysisResult
    stabilizer_log: StabilizerEventLog
    actuator_trace: list
    tof_truth: np.ndarray  # mean programmed transit time per analysis block, ps
    true_penalty: np.ndarray  # per-slot 1 - |<Phi+| (I x W) |Phi+>|^2 during transmission
    summary: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None


def _fan_out(seed: int):
    names = ("channel", "stabilizer", "source", "detector", "background")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def _uniform_times(rng, rate, t0, t1):
    """Sorted int-ps Poisson times on [t0, t1) seconds."""
    if rate <= 0 or t1 <= t0:
        return np.zeros(0, np.int64)
    n = rng.poisson(rate * (t1 - t0))
    a, b = int(round(t0 * PS_PER_S)), int(round(t1 * PS_PER_S))
    return np.sort(a + np.floor(rng.random(n) * (b - a)).astype(np.int64))


class _Link:
    """Per-slot bookkeeping for the field or local link."""

    def __init__(self, cfg: ScenarioConfig, rngs):
        self.cfg = cfg
        self.local = cfg.scenario.link == "local"
        self.cp = cfg.channel_params()
        self.rng = rngs["channel"]
        self.state = initial_channel_state(self.cp, self.rng, 0.0, randomize=not self.local)
        self.xx_nm = cfg.source.xx_wavelength_nm

    def step(self, dt):
        if not self.local:
            self.state = advance(self.state, dt, self.cp, self.rng)

    def rotation(self, wavelength_nm) -> PolRotation:
        if self.local:
            return PolRotation.identity()
        return birefringence_at(self.state, wavelength_nm)

    @property
    def tof(self) -> float:
        return 0.0 if self.local else self.state.current_tof

    @property
    def transmission(self) -> float:
        return 1.0 if self.local else self.cp.transmission(include_component_loss=True)


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> ScenarioResult:
    """Run the scenario; with ``out_dir`` all artifacts are written there."""
    sc, st, an = cfg.scenario, cfg.stabilizer, cfg.analysis
    rngs = _fan_out(sc.seed)
    src = cfg.source_params()
    det = cfg.detector_params()
    pair_det = DetectorParams(det.jitter_fwhm_ps, 1.0, 0.0)
    bsched = cfg.basis_schedule()
    sched = cfg.schedule()
    link = _Link(cfg, rngs)
    stabilized = st.enabled and not link.local
    refs = generate_references(wavelength_nm=st.reference_wavelength_nm)
    slog = StabilizerEventLog()
    trace = []

    eff = det.efficiency
    T = link.transmission
    rate_pairs = src.pair_rate * eff * eff * T
    rate_x_only = src.pair_rate * eff * (1 - eff * T) / sc.acceleration
    rate_xx_only = src.pair_rate * eff * T * (1 - eff) / sc.acceleration
    rate_dark = det.dark_rate_hz / sc.acceleration

    # initial lock, made before the clock starts
    act = ActuatorState()
    if not link.local:
        res = recover(act, link.rotation(refs.wavelength_nm), refs, sched, rngs["stabilizer"],
                      st.meter_noise_rel, mode="realign")
        act = res.actuators
    frame_inv = refs.locked_rotation().inverse()
    trace.append((0.0, act.voltages))

    period = st.check_period_s
    n_sub = int(round(period / sc.channel_step_s))
    n_slots = int(math.ceil(sc.horizon_s / period - 1e-9))
    horizon = sc.horizon_s
    busy_until = 0.0
    last_realign = 0.0
    parts = []
    penalty = np.zeros(n_slots)
    tof_samples = []

    for k in range(n_slots):
        t_slot = k * period
        slot_end = min(horizon, t_slot + period)
        if k > 0:
            link.step(period / n_sub)
        # --- reference check and feedback ---
        if stabilized and busy_until <= t_slot + 1e-9:
            ch_rot = link.rotation(refs.wavelength_nm)
            meter = _Meter(refs, ch_rot, st.meter_noise_rel, rngs["stabilizer"])
            eta = meter(act)
            dur = min(st.check_duration_s, slot_end - t_slot)
            slog.append(LogRecord(t_slot, "check", dur, eta[0], eta[1], act.voltages))
            busy_until = t_slot + dur
            decision = check_cycle(sched, t_slot, eta, last_realign)
            if decision is not Decision.NO_ACTION and busy_until < horizon:
                mode = "realign" if decision is Decision.FORCED_REALIGN else "recovery"
                res = recover(act, ch_rot, refs, sched, rngs["stabilizer"], st.meter_noise_rel, mode=mode)
                act = res.actuators
                dur = min(res.duration, horizon - busy_until)
                slog.append(LogRecord(busy_until, mode, dur, res.eta_a, res.eta_b, act.voltages))
                busy_until += dur
                if mode == "realign":
                    last_realign = t_slot
            trace.append((busy_until, act.voltages))

        # --- qubit transmission, piecewise constant channel ---
        pieces = []
        for j in range(n_sub):
            a = t_slot + j * period / n_sub
            b = min(slot_end, a + period / n_sub)
            if j > 0:
                link.step(period / n_sub)
            tof_samples.append((a, link.tof))
            a = max(a, busy_until)
            if b <= a:
                continue
            w = frame_inv @ act.rotation() @ link.rotation(link.xx_nm)
            if stabilized:
                true_eta = _Meter(refs, link.rotation(refs.wavelength_nm), 0.0, None).true_etas(act)
                slog.append(LogRecord(a, "transmission", b - a, true_eta[0], true_eta[1]))
            pieces.append((a, b, w, link.tof))
        if pieces:
            tx = sum(b - a for a, b, _, _ in pieces)
            penalty[k] = sum((b - a) * math.sin(w.angle / 2) ** 2 for a, b, w, _ in pieces) / tx
            parts.append(_slot_events(pieces, src, rate_pairs, pair_det, bsched, rngs))
            parts.append(_background(pieces, rate_x_only, rate_xx_only, bsched, rngs["background"]))
        parts.append(_darks(t_slot, slot_end, rate_dark, bsched, rngs["background"]))

    events = DetectionEvents.concat(parts)
    analysis = analyze_events(events, cfg)
    tof_truth = _block_means(tof_samples, an.block_s, horizon)
    result = ScenarioResult(cfg, events, analysis, slog, trace, tof_truth, penalty)
    result.summary = _summary(result, stabilized)
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def _slot_events(pieces, src, rate, pair_det, bsched, rngs):
    rng = rngs["source"]
    xx_t, tau, jones, tofs = [], [], [], []
    for a, b, w, tof in pieces:
        t = _uniform_times(rng, rate, a, b)
        xx_t.append(t)
        tau.append(rng.exponential(src.x_lifetime_ps, len(t)))
        jones.append(np.broadcast_to(quat_jones(w.q), (len(t), 2, 2)))
        tofs.append(np.full(len(t), tof))
    xx_t = np.concatenate(xx_t)
    if len(xx_t) == 0:
        return DetectionEvents.empty()
    tau = np.concatenate(tau)
    # X is detected locally, so it arrives one transit time before its XX partner
    # keep the week-scale absolute times in int64; float64 resolves only ~100 ps there
    x_t = xx_t + np.rint(tau - np.concatenate(tofs)).astype(np.int64)
    ok = np.ones(len(xx_t), bool)
    batch = PairBatch(x_t, xx_t, ok, ok, phase=src.fss_angular_frequency * tau, mixing=src.mixing_p,
                      xx_jones=np.concatenate(jones))
    return detect(batch, pair_det, bsched, rngs["detector"])


def _background(pieces, rate_x, rate_xx, bsched, rng):
    det, ts = [], []
    for a, b, _, _ in pieces:
        for base, rate in ((0, rate_x), (2, rate_xx)):
            t = _uniform_times(rng, rate, a, b)
            det.append(base + rng.integers(0, 2, len(t)))
            ts.append(t)
    return _finish(np.concatenate(det), np.concatenate(ts), bsched)


def _darks(t0, t1, rate, bsched, rng):
    det, ts = [], []
    for d in range(4):
        t = _uniform_times(rng, rate, t0, t1)
        det.append(np.full(len(t), d))
        ts.append(t)
    return _finish(np.concatenate(det), np.concatenate(ts), bsched)


def _finish(det, ts, bsched):
    if len(ts) == 0:
        return DetectionEvents.empty()
    sec = ts / PS_PER_S
    keep = bsched.active(sec)
    return DetectionEvents.build(det[keep], ts[keep], bsched.basis_at(sec[keep]))


def _block_means(samples, block_s, horizon):
    t = np.array([s[0] for s in samples])
    v = np.array([s[1] for s in samples])
    n_blocks = int(math.ceil(horizon / block_s - 1e-9))
    idx = np.minimum((t // block_s).astype(int), n_blocks - 1)
    sums = np.bincount(idx, weights=v, minlength=n_blocks)
    counts = np.bincount(idx, minlength=n_blocks)
    return sums / np.maximum(counts, 1)


def _finite(x):
    x = np.asarray(x, float)
    return x[np.isfinite(x)]


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _summary(result: ScenarioResult, stabilized: bool) -> dict:
    cfg = result.config
    F = result.analysis.fidelities()
    Fv = _finite(F)
    measured = result.analysis.transit_change()
    programmed = result.tof_truth - result.tof_truth[0]
    ok = np.isfinite(measured)
    first = np.flatnonzero(ok)
    if len(first):
        programmed = result.tof_truth - result.tof_truth[first[0]]
    tof_err = np.abs(measured[ok] - programmed[ok])
    s = {
        "seed": cfg.scenario.seed,
        "config_hash": cfg.hash(),
        "link": cfg.scenario.link,
        "stabilized": stabilized,
        "horizon_s": cfg.scenario.horizon_s,
        "n_events": len(result.events),
        "n_blocks": len(F),
        "n_valid_blocks": int(len(Fv)),
        "mean_F": float(Fv.mean()) if len(Fv) else None,
        "std_F": float(Fv.std(ddof=1)) if len(Fv) > 1 else None,
        "min_F": float(Fv.min()) if len(Fv) else None,
        "max_F": float(Fv.max()) if len(Fv) else None,
        "mean_sigma_F": float(np.mean([r.sigma for r in result.analysis.records])) if len(Fv) else None,
        "programmed_tof_drift_ps": float(np.ptp(result.tof_truth)),
        "max_tof_tracking_error_ps": float(tof_err.max()) if len(tof_err) else None,
        "mean_true_rotation_penalty": float(result.true_penalty.mean()),
    }
    if stabilized and len(result.stabilizer_log):
        d = duty_cycle_report(result.stabilizer_log, cfg.scenario.horizon_s, cfg.stabilizer.check_period_s,
                              cfg.stabilizer.eta_threshold)
        s["duty"] = {k: _clean(v) for k, v in d.__dict__.items()}
    return s


def write_artifacts(result: ScenarioResult, out_dir):
    cfg = result.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.scenario.write_event_log:
        name = "events.bin" if cfg.scenario.event_log_format == "binary" else "events.csv"
        write_events(result.events, out / name, cfg.scenario.seed, cfg.hash(), cfg.scenario.event_log_format)
    write_analysis(result.analysis, out)
    with open(out / "tof_truth.csv", "w") as fh:
        fh.write("block_start_s,programmed_tof_ps\n")
        for k, v in enumerate(result.tof_truth):
            fh.write(f"{k * cfg.analysis.block_s:.1f},{v:.6f}\n")
    write_actuator_trace(result.actuator_trace, out / "actuator_trace.csv")
    write_duty_log(result.stabilizer_log, out / "duty_log.csv", cfg.stabilizer.check_period_s)
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    result.out_dir = out

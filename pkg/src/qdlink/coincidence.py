"""Click simulation, coincidence histograms, zero-delay fits and fidelity estimation.

Detector ids: 0 and 1 are the two PBS ports of the X arm, 2 and 3 those of
the XX arm.  Port 0 projects onto the first state of the active basis (H, D
or R).  Delays are always X arrival minus XX arrival, in picoseconds.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import NoPeakError, UndefinedContrastError, UndefinedFidelityError
from .polarization import BASIS_VECTORS, Basis, TwoPhotonState
from .source import PS_PER_S

log = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
GRID_PS = 48
X_DETECTORS = (0, 1)
XX_DETECTORS = (2, 3)


@dataclass(frozen=True)
class DetectorParams:
    jitter_fwhm_ps: float = 70.0  # whole system, both detectors
    efficiency: float = 0.5
    dark_rate_hz: float = 100.0  # per detector

    @property
    def per_detector_sigma_ps(self) -> float:
        return self.jitter_fwhm_ps * FWHM_TO_SIGMA / math.sqrt(2.0)


# --- basis schedule --------------------------------------------------------------------


@dataclass(frozen=True)
class BasisSchedule:
    """HV -> DA -> RL, ``switch_period`` seconds each, repeating."""

    switch_period: float = 600.0
    guard: float = 0.0
    order: tuple = (Basis.HV, Basis.DA, Basis.RL)

    @property
    def cycle(self) -> float:
        return self.switch_period * len(self.order)

    def basis_at(self, t_s):
        """Basis index for times in seconds (scalar or array)."""
        k = np.floor(np.asarray(t_s, dtype=float) / self.switch_period).astype(np.int64) % len(self.order)
        out = np.asarray([int(b) for b in self.order])[k]
        return Basis(int(out)) if np.ndim(out) == 0 else out

    def active(self, t_s):
        """False inside the guard interval that follows each switch."""
        t = np.asarray(t_s, dtype=float)
        return np.mod(t, self.switch_period) >= self.guard

    def segments(self, horizon: float):
        """[(start, end, Basis)] covering [0, horizon)."""
        out = []
        t = 0.0
        while t < horizon - 1e-9:
            end = min(horizon, (math.floor(t / self.switch_period + 1e-9) + 1) * self.switch_period)
            out.append((t, end, self.basis_at(t)))
            t = end
        return out


def basis_schedule(horizon: float, switch_period: float = 600.0, guard: float = 0.0):
    sched = BasisSchedule(switch_period, guard)
    return sched, sched.segments(horizon)


# --- pairs and clicks ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairBatch:
    """Pairs reaching the analyzers.

    The polarization state of pair i is ``(I x W_i) rho_i (I x W_i)^dag`` where
    rho_i is the Werner mixture of (|HH> + e^{i phase_i}|VV>)/sqrt2 with weight
    ``mixing``, unless ``rho`` fixes one state for the whole batch.  ``xx_jones``
    is W (2x2, shared) or one 2x2 matrix per pair.
    """

    x_time_ps: np.ndarray
    xx_time_ps: np.ndarray
    x_survived: np.ndarray
    xx_survived: np.ndarray
    phase: Optional[np.ndarray] = None
    mixing: float = 1.0
    xx_jones: Optional[np.ndarray] = None
    rho: Optional[TwoPhotonState] = None

    def __len__(self):
        return len(self.x_time_ps)

    def probabilities(self, basis_x, basis_xx) -> np.ndarray:
        """Joint port probabilities, columns (00, 01, 10, 11) as (X port, XX port)."""
        bx = np.broadcast_to(np.asarray(basis_x), (len(self),))
        bxx = np.broadcast_to(np.asarray(basis_xx), (len(self),))
        a = BASIS_VECTORS[bx]  # (N, port, 2)
        b = BASIS_VECTORS[bxx]
        if self.rho is not None:
            v = np.einsum("npi,nqj->npqij", a, b).reshape(len(self), 4, 4)
            p = np.einsum("nki,ij,nkj->nk", v.conj(), self.rho.rho, v).real
            return np.clip(p, 0.0, None)
        w = np.eye(2, dtype=complex) if self.xx_jones is None else np.asarray(self.xx_jones)
        # g[n, q, l] = <b_q| W |l>
        if w.ndim == 2:
            g = np.einsum("nqi,il->nql", b.conj(), w)
        else:
            g = np.einsum("nqi,nil->nql", b.conj(), w)
        phase = np.zeros(len(self)) if self.phase is None else self.phase
        e = np.exp(1j * phase)
        amp = (a.conj()[:, :, None, 0] * g[:, None, :, 0] + e[:, None, None] * a.conj()[:, :, None, 1] * g[:, None, :, 1])
        p = self.mixing * 0.5 * np.abs(amp.reshape(len(self), 4)) ** 2 + (1.0 - self.mixing) / 4.0
        return p


@dataclass(frozen=True, eq=False)
class DetectionEvents:
    """Columnar click record sorted by timestamp (ties by detector id)."""

    detector: np.ndarray  # uint8
    timestamp_ps: np.ndarray  # int64, non-negative
    basis: np.ndarray  # uint8

    def __len__(self):
        return len(self.timestamp_ps)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.uint8), np.zeros(0, np.int64), np.zeros(0, np.uint8))

    @classmethod
    def build(cls, detector, timestamp_ps, basis):
        detector = np.asarray(detector, dtype=np.uint8)
        ts = np.asarray(timestamp_ps, dtype=np.int64)
        basis = np.asarray(basis, dtype=np.uint8)
        order = np.lexsort((detector, ts))
        return cls(detector[order], ts[order], basis[order])

    @classmethod
    def concat(cls, parts: Sequence["DetectionEvents"]):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls.build(
            np.concatenate([p.detector for p in parts]),
            np.concatenate([p.timestamp_ps for p in parts]),
            np.concatenate([p.basis for p in parts]),
        )

    def select(self, mask) -> "DetectionEvents":
        return DetectionEvents(self.detector[mask], self.timestamp_ps[mask], self.basis[mask])

    def time_slice(self, t0_ps: int, t1_ps: int) -> "DetectionEvents":
        lo, hi = np.searchsorted(self.timestamp_ps, [t0_ps, t1_ps], side="left")
        return DetectionEvents(self.detector[lo:hi], self.timestamp_ps[lo:hi], self.basis[lo:hi])

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamp_ps) >= 0))

    def equals(self, other: "DetectionEvents") -> bool:
        return (
            np.array_equal(self.detector, other.detector)
            and np.array_equal(self.timestamp_ps, other.timestamp_ps)
            and np.array_equal(self.basis, other.basis)
        )


def _sample_outcomes(p: np.ndarray, rng) -> np.ndarray:
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cum[:, -1]
    return (u[:, None] >= cum[:, :-1]).sum(axis=1)


def detect(pairs: PairBatch, detector: DetectorParams, schedule: BasisSchedule, rng,
           dark_span_s: Optional[tuple] = None, dark_fraction: float = 1.0) -> DetectionEvents:
    """Click record for a batch of pairs plus dark counts over ``dark_span_s``.

    Both photons of a pair are projected jointly (Born rule) in the bases
    active at their own arrival times; lost photons simply do not click.
    Each detector adds Gaussian timing jitter, and Poissonian dark counts at
    ``dark_rate_hz * dark_fraction`` are spread uniformly over the span.
    """
    n = len(pairs)
    det_parts, ts_parts, basis_parts = [], [], []
    if n:
        bx = schedule.basis_at(pairs.x_time_ps / PS_PER_S)
        bxx = schedule.basis_at(pairs.xx_time_ps / PS_PER_S)
        outcome = _sample_outcomes(pairs.probabilities(bx, bxx), rng)
        port_x, port_xx = outcome // 2, outcome % 2
        eff = detector.efficiency
        x_ok = pairs.x_survived & (rng.random(n) < eff) & schedule.active(pairs.x_time_ps / PS_PER_S)
        xx_ok = pairs.xx_survived & (rng.random(n) < eff) & schedule.active(pairs.xx_time_ps / PS_PER_S)
        sig = detector.per_detector_sigma_ps
        jx = rng.normal(0.0, sig, n) if sig > 0 else np.zeros(n)
        jxx = rng.normal(0.0, sig, n) if sig > 0 else np.zeros(n)
        det_parts += [port_x[x_ok], 2 + port_xx[xx_ok]]
        ts_parts += [
            pairs.x_time_ps[x_ok] + np.rint(jx[x_ok]).astype(np.int64),
            pairs.xx_time_ps[xx_ok] + np.rint(jxx[xx_ok]).astype(np.int64),
        ]
        basis_parts += [bx[x_ok], bxx[xx_ok]]
    if dark_span_s is not None and detector.dark_rate_hz > 0 and dark_fraction > 0:
        t0, t1 = dark_span_s
        start, span = int(round(t0 * PS_PER_S)), int(round((t1 - t0) * PS_PER_S))
        for d in range(4):
            k = rng.poisson(detector.dark_rate_hz * dark_fraction * (t1 - t0))
            ts = start + np.floor(rng.random(k) * span).astype(np.int64)
            keep = schedule.active(ts / PS_PER_S)
            ts = ts[keep]
            det_parts.append(np.full(len(ts), d))
            ts_parts.append(ts)
            basis_parts.append(schedule.basis_at(ts / PS_PER_S) if len(ts) else np.zeros(0, np.int64))
    if not ts_parts:
        return DetectionEvents.empty()
    ts = np.concatenate(ts_parts)
    keep = ts >= 0
    return DetectionEvents.build(
        np.concatenate(det_parts)[keep], ts[keep], np.concatenate(basis_parts)[keep]
    )


# --- histograms ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Co/cross coincidences of one basis binned on a fixed delay grid.

    Bin k covers [center + (k - K) * grid, center + (k - K + 1) * grid); the
    raw delays are kept so that windows can be cut on the continuous axis.
    """

    basis: Basis
    grid_ps: int
    center_ps: int
    edges: np.ndarray
    counts_co: np.ndarray
    counts_cross: np.ndarray
    delays_co: np.ndarray
    delays_cross: np.ndarray
    counts_hh: np.ndarray = field(default=None)
    delays_hh: np.ndarray = field(default=None)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def counts_total(self) -> np.ndarray:
        return self.counts_co + self.counts_cross

    def counts(self, which: str = "co") -> np.ndarray:
        """Counts of one port combination: co, cross, total or hh."""
        if which == "co":
            return self.counts_co
        if which == "cross":
            return self.counts_cross
        if which == "total":
            return self.counts_total
        if which == "hh" and self.counts_hh is not None:
            return self.counts_hh
        raise ValueError(f"no {which!r} counts in this histogram")

    def bin_index(self, delay_ps) -> np.ndarray:
        """Bin index relative to the bin starting at ``center_ps``."""
        return np.floor_divide(np.asarray(delay_ps) - self.center_ps, self.grid_ps)

    def sideband_level(self, t0_ps: float, sideband_ps=(5000.0, 20000.0), which="co") -> float:
        """Mean counts per bin at |delay - t0| within the sideband range."""
        c = self.bin_centers
        off = np.abs(c - t0_ps)
        m = (off >= sideband_ps[0]) & (off <= sideband_ps[1])
        return float(self.counts(which)[m].mean()) if m.any() else math.nan

    def normalized(self, t0_ps: Optional[float] = None, sideband_ps=(5000.0, 20000.0), which="co"):
        """Counts divided by the far-delay (accidental) level."""
        t0 = self.center_ps if t0_ps is None else t0_ps
        level = self.sideband_level(t0, sideband_ps, which)
        counts = self.counts(which)
        if not level > 0:
            return np.full(len(counts), math.nan)
        return counts / level


def _pair_clicks(x_t, xx_t, lo_delay, hi_delay):
    """Index pairs (i, j) with lo_delay <= x_t[i] - xx_t[j] < hi_delay; xx_t sorted."""
    lo = np.searchsorted(xx_t, x_t - hi_delay, side="right")
    hi = np.searchsorted(xx_t, x_t - lo_delay, side="right")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    i = np.repeat(np.arange(len(x_t)), n)
    start = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    j = np.arange(total) + start
    return i, j


def histogram(events: DetectionEvents, basis, window_halfwidth: float, grid: int = GRID_PS,
              center_ps: int = 0) -> CoincidenceHistogram:
    """Pair every X click with the XX clicks whose delay lies within ``center +- halfwidth``."""
    if not events.is_sorted():
        raise ValueError("events must be sorted by timestamp")
    basis = Basis(int(basis))
    k = int(math.ceil(window_halfwidth / grid))
    center_ps = int(center_ps)
    edges = center_ps + grid * np.arange(-k, k + 1, dtype=np.int64)
    ev = events.select(events.basis == int(basis))
    xm = ev.detector < 2
    x_t, x_p = ev.timestamp_ps[xm], ev.detector[xm]
    xx_t, xx_p = ev.timestamp_ps[~xm], ev.detector[~xm] - 2
    i, j = _pair_clicks(x_t, xx_t, int(edges[0]), int(edges[-1]))
    d = x_t[i] - xx_t[j]
    co = x_p[i] == xx_p[j]
    hh = co & (x_p[i] == 0)
    idx = (d - edges[0]) // grid
    nb = 2 * k
    return CoincidenceHistogram(
        basis=basis,
        grid_ps=grid,
        center_ps=center_ps,
        edges=edges,
        counts_co=np.bincount(idx[co], minlength=nb)[:nb],
        counts_cross=np.bincount(idx[~co], minlength=nb)[:nb],
        delays_co=np.sort(d[co]),
        delays_cross=np.sort(d[~co]),
        counts_hh=np.bincount(idx[hh], minlength=nb)[:nb],
        delays_hh=np.sort(d[hh]),
    )


# --- zero-delay fit ---------------------------------------------------------------------


def emg_cdf(x, sigma, tau):
    """CDF of an exponential (mean tau) convolved with a Gaussian (sigma), at offset x."""
    x = np.asarray(x, dtype=float)
    a = special.ndtr(x / sigma)
    b = np.exp(sigma * sigma / (2 * tau * tau) - x / tau + special.log_ndtr(x / sigma - sigma / tau))
    return a - b


def cascade_model(edges, t0, amplitude, tau, background, sigma):
    """Expected counts per bin: ``amplitude`` peak counts plus ``background`` per bin."""
    cdf = emg_cdf(np.asarray(edges, dtype=float) - t0, sigma, tau)
    return amplitude * np.diff(cdf) + background


@dataclass(frozen=True)
class PeakFit:
    t0: float
    amplitude: float
    tau: float
    background: float
    sigma: float

    def model(self, edges):
        return cascade_model(edges, self.t0, self.amplitude, self.tau, self.background, self.sigma)


def fit_cascade_peak(hist: CoincidenceHistogram, which: str = "co", jitter_fwhm_ps: float = 70.0,
                     tau_guess_ps: float = 600.0, min_peak_counts: int = 5) -> PeakFit:
    """Least-squares fit of the exponential-decay-times-Gaussian peak on a flat background."""
    y = hist.counts(which).astype(float)
    if len(y) == 0:
        raise NoPeakError("empty histogram")
    peak = float(y.max())
    med = float(np.median(y))
    if peak < min_peak_counts or peak < 5 * med:
        raise NoPeakError(f"no cascade peak: max bin {peak:g}, median {med:g}")
    sigma = jitter_fwhm_ps * FWHM_TO_SIGMA
    edges = hist.edges.astype(float)
    ip = int(np.argmax(y))
    t_peak = 0.5 * (edges[ip] + edges[ip + 1])
    bg0 = med
    amp0 = max(1.0, float((y - bg0).clip(0).sum()))
    w = 1.0 / np.sqrt(np.maximum(y, 1.0))

    def resid(p):
        t0, amp, tau, bg = p
        return (cascade_model(edges, t0, amp, tau, bg, sigma) - y) * w

    p0 = [t_peak - 0.5 * hist.grid_ps, amp0, tau_guess_ps, bg0]
    lb = [edges[0], 0.0, 5.0, 0.0]
    ub = [edges[-1], 10 * amp0 + 10, 50_000.0, peak + 1]
    res = optimize.least_squares(resid, p0, bounds=(lb, ub), x_scale="jac", method="trf")
    t0, amp, tau, bg = res.x
    return PeakFit(float(t0), float(amp), float(tau), float(bg), sigma)


def fit_zero_delay(hist: CoincidenceHistogram, which: str = "co", jitter_fwhm_ps: float = 70.0,
                   tau_guess_ps: float = 600.0) -> float:
    """Fitted zero delay t0 (ps) of the cascade peak."""
    return fit_cascade_peak(hist, which, jitter_fwhm_ps, tau_guess_ps).t0


# --- contrasts and fidelity --------------------------------------------------------------


def contrast(c_mm: float, c_mn: float) -> float:
    total = c_mm + c_mn
    if total == 0:
        raise UndefinedContrastError("co + cross counts are zero")
    return (c_mm - c_mn) / total


def _contrast_sigma(c, x, var_c, var_x):
    s = c + x
    return math.sqrt((2 * x / s**2) ** 2 * var_c + (2 * c / s**2) ** 2 * var_x)


@dataclass(frozen=True)
class BasisCounts:
    n_co: int
    n_cross: int
    acc_co: float
    acc_cross: float
    contrast: float
    sigma: float


@dataclass(frozen=True)
class FidelityRecord:
    block_start: float
    fidelity: float
    sigma: float
    t0: float
    contrasts: tuple  # (C_HV, C_DA, C_RL)
    counts: tuple  # BasisCounts per basis HV, DA, RL

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _in_window(delays, lo, hi):
    a, b = np.searchsorted(delays, [lo, hi], side="left")
    return int(b - a)


def window_counts(hist: CoincidenceHistogram, t0: float, window: float = 48.0,
                  sideband_ps=(5000.0, 20000.0), subtract_accidentals: bool = True,
                  offset: float = 0.0) -> BasisCounts:
    """Co/cross counts in [t0 + offset - window/2, t0 + offset + window/2) and their contrast."""
    lo, hi = t0 + offset - window / 2, t0 + offset + window / 2
    n_co = _in_window(hist.delays_co, lo, hi)
    n_cr = _in_window(hist.delays_cross, lo, hi)
    acc_co = acc_cr = 0.0
    var_acc_co = var_acc_cr = 0.0
    if subtract_accidentals:
        s0, s1 = sideband_ps
        span = 2 * (s1 - s0)
        sb_co = _in_window(hist.delays_co, t0 - s1, t0 - s0) + _in_window(hist.delays_co, t0 + s0, t0 + s1)
        sb_cr = _in_window(hist.delays_cross, t0 - s1, t0 - s0) + _in_window(hist.delays_cross, t0 + s0, t0 + s1)
        scale = window / span
        acc_co, acc_cr = sb_co * scale, sb_cr * scale
        var_acc_co, var_acc_cr = sb_co * scale**2, sb_cr * scale**2
    c = n_co - acc_co
    x = n_cr - acc_cr
    if n_co + n_cr == 0 or c + x <= 0:
        raise UndefinedFidelityError(f"empty post-selection window in basis {hist.basis.name}")
    C = (c - x) / (c + x)
    sig = _contrast_sigma(c, x, n_co + var_acc_co, n_cr + var_acc_cr)
    return BasisCounts(n_co, n_cr, acc_co, acc_cr, C, sig)


def fidelity_estimate(hists, t0: float, window: float = 48.0, subtract_accidentals: bool = True,
                      sideband_ps=(5000.0, 20000.0), block_start: float = 0.0,
                      offset: float = 0.0) -> FidelityRecord:
    """F = (1 + C_HV + C_DA - C_RL)/4 from the windowed counts of the three bases.

    ``hists`` maps Basis -> CoincidenceHistogram (or is a sequence in HV, DA, RL order).
    """
    if not isinstance(hists, dict):
        hists = {h.basis: h for h in hists}
    counts = tuple(
        window_counts(hists[b], t0, window, sideband_ps, subtract_accidentals, offset) for b in Basis
    )
    c_hv, c_da, c_rl = (c.contrast for c in counts)
    F = (1.0 + c_hv + c_da - c_rl) / 4.0
    sigma = math.sqrt(sum(c.sigma**2 for c in counts)) / 4.0
    return FidelityRecord(block_start, F, sigma, t0, (c_hv, c_da, c_rl), counts)


def track_time_of_flight(records: Sequence[FidelityRecord]) -> np.ndarray:
    """t0(block) - t0(first block), ps."""
    if not records:
        raise ValueError("need at least one record")
    t = np.array([r.t0 for r in records], dtype=float)
    return t - t[0]


def fidelity_vs_delay(hists, t0: float, delays_ps, window: float = 48.0,
                      subtract_accidentals: bool = True, sideband_ps=(5000.0, 20000.0)):
    """(F, sigma, n_window) for post-selection windows centred at t0 + d."""
    F, S, N = [], [], []
    for d in delays_ps:
        try:
            rec = fidelity_estimate(hists, t0, window, subtract_accidentals, sideband_ps, offset=d)
        except UndefinedFidelityError:
            F.append(math.nan), S.append(math.nan), N.append(0)
            continue
        F.append(rec.fidelity)
        S.append(rec.sigma)
        N.append(sum(c.n_co + c.n_cross for c in rec.counts))
    return np.array(F), np.array(S), np.array(N)


def fit_oscillation_period(delays_ps, F, sigma, period_range_ps=(200.0, 20_000.0)) -> float:
    """Period of F(d) = a + b cos(2 pi d / T + c), weighted least squares.

    A coarse scan over log-spaced trial periods seeds the nonlinear fit.
    """
    d = np.asarray(delays_ps, dtype=float)
    f = np.asarray(F, dtype=float)
    s = np.asarray(sigma, dtype=float)
    ok = np.isfinite(f) & np.isfinite(s) & (s > 0)
    d, f, s = d[ok], f[ok], s[ok]
    if len(d) < 5:
        raise ValueError("too few points for a period fit")
    w = 1.0 / s

    def linear_fit(T):
        X = np.column_stack([np.ones_like(d), np.cos(2 * np.pi * d / T), np.sin(2 * np.pi * d / T)])
        coef, *_ = np.linalg.lstsq(X * w[:, None], f * w, rcond=None)
        r = (X @ coef - f) * w
        return float(r @ r), coef

    trials = np.geomspace(*period_range_ps, 2000)
    chi = [linear_fit(T)[0] for T in trials]
    T0 = trials[int(np.argmin(chi))]
    _, (a, cc, ss) = linear_fit(T0)

    def resid(p):
        a, b, c, T = p
        return (a + b * np.cos(2 * np.pi * d / T + c) - f) * w

    b0 = math.hypot(cc, ss)
    c0 = math.atan2(-ss, cc)
    res = optimize.least_squares(resid, [a, b0, c0, T0], method="lm")
    return float(abs(res.x[3]))


FIDELITY_COLUMNS = ["block_start_s", "F", "sigma_F", "t0_ps", "C_HV", "C_DA", "C_RL",
                    "co_HV", "cross_HV", "co_DA", "cross_DA", "co_RL", "cross_RL"]


def fidelity_row(r: FidelityRecord) -> list:
    row = [f"{r.block_start:.1f}", f"{r.fidelity:.10g}", f"{r.sigma:.10g}", f"{r.t0:.6f}"]
    row += [f"{c:.10g}" for c in r.contrasts]
    for c in r.counts:
        row += [c.n_co, c.n_cross]
    return row


def write_fidelity_timeseries(records: Sequence[FidelityRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIDELITY_COLUMNS)
        for r in records:
            w.writerow(fidelity_row(r))

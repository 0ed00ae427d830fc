"""Block-wise analysis of a detection record: zero-delay fits, fidelity and time-of-flight series.

The same function serves the in-line path of :func:`qdlink.simulate.run_scenario`
and the offline path that re-reads a persisted event log, so both produce the
same numbers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .coincidence import (
    CoincidenceHistogram,
    DetectionEvents,
    FidelityRecord,
    PeakFit,
    fidelity_vs_delay,
    fit_cascade_peak,
    fidelity_estimate,
    histogram,
    FIDELITY_COLUMNS,
    fidelity_row,
)
from .config import ScenarioConfig
from .errors import NoPeakError, UndefinedFidelityError
from .eventlog import read_events
from .polarization import Basis
from .source import PS_PER_S

log = logging.getLogger(__name__)


def histogram_center_ps(cfg: ScenarioConfig) -> int:
    """Nominal X - XX delay of the cascade peak: minus the fiber transit time."""
    if cfg.scenario.link == "local":
        return 0
    return -int(round(cfg.channel_params().tof_base))


@dataclass
class BlockResult:
    block_start: float
    record: Optional[FidelityRecord]
    fit: Optional[PeakFit]
    hists: dict
    skipped_reason: str = ""


@dataclass
class AnalysisResult:
    blocks: list = field(default_factory=list)

    @property
    def records(self):
        return [b.record for b in self.blocks if b.record is not None]

    def fidelities(self) -> np.ndarray:
        return np.array([np.nan if b.record is None else b.record.fidelity for b in self.blocks])

    def t0_series(self) -> np.ndarray:
        return np.array([np.nan if b.fit is None else b.fit.t0 for b in self.blocks])

    def transit_change(self) -> np.ndarray:
        """Change of the fiber transit time relative to the first fitted block (ps).

        The delay axis is X arrival minus XX arrival, so a longer transit of
        the XX photon moves the peak to more negative delays.
        """
        t0 = self.t0_series()
        ok = np.flatnonzero(np.isfinite(t0))
        if len(ok) == 0:
            return t0
        return -(t0 - t0[ok[0]])


def analyze_events(events: DetectionEvents, cfg: ScenarioConfig) -> AnalysisResult:
    an = cfg.analysis
    horizon = cfg.scenario.horizon_s
    n_blocks = int(math.ceil(horizon / an.block_s - 1e-9))
    center = histogram_center_ps(cfg)
    jitter = cfg.detector.jitter_fwhm_ps
    sideband = (an.sideband_lo_ps, an.sideband_hi_ps)
    out = AnalysisResult()
    for k in range(n_blocks):
        t_start = k * an.block_s
        t_end = min(horizon, (k + 1) * an.block_s)
        ev = events.time_slice(int(round(t_start * PS_PER_S)), int(round(t_end * PS_PER_S)))
        hists = {b: histogram(ev, b, an.halfwidth_ps, an.grid_ps, center) for b in Basis}
        fit = None
        try:
            try:
                fit = fit_cascade_peak(hists[Basis.HV], "co", jitter, cfg.source.x_lifetime_ps)
            except NoPeakError:
                fit = fit_cascade_peak(hists[Basis.HV], "total", jitter, cfg.source.x_lifetime_ps)
            rec = fidelity_estimate(hists, fit.t0, an.window_ps, an.subtract_accidentals, sideband,
                                    block_start=t_start)
            out.blocks.append(BlockResult(t_start, rec, fit, hists))
        except (NoPeakError, UndefinedFidelityError) as exc:
            log.info("block at %.0f s skipped: %s", t_start, exc)
            out.blocks.append(BlockResult(t_start, None, fit, hists, str(exc)))
    return out


def aligned_histograms(result: AnalysisResult, grid: int = 48) -> dict:
    """Per-basis histograms of all fitted blocks, each shifted so its t0 sits at 0."""
    fitted = [blk for blk in result.blocks if blk.fit is not None]
    hw = max(((blk.hists[Basis.HV].edges[-1] - blk.hists[Basis.HV].edges[0]) / 2 for blk in fitted),
             default=grid)
    k = int(math.ceil(hw / grid))
    edges = grid * np.arange(-k, k + 1, dtype=np.int64)
    nb = 2 * k

    def shifted(name, b):
        parts = [getattr(blk.hists[b], name) - blk.fit.t0 for blk in fitted]
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0)

    def binned(d):
        idx = np.floor((d - edges[0]) / grid).astype(np.int64)
        return np.bincount(idx[(idx >= 0) & (idx < nb)], minlength=nb)

    merged = {}
    for b in Basis:
        co, cr, hh = (shifted(n, b) for n in ("delays_co", "delays_cross", "delays_hh"))
        merged[b] = CoincidenceHistogram(b, grid, 0, edges, binned(co), binned(cr), co, cr, binned(hh), hh)
    return merged


def fig2b_series(result: AnalysisResult, cfg: ScenarioConfig):
    """(delays, F, sigma, n) for 48 ps windows stepped from the zero delay outward."""
    an = cfg.analysis
    merged = aligned_histograms(result, an.grid_ps)
    delays = np.arange(0.0, an.fig2b_max_delay_ps + 1e-9, an.window_ps)
    F, S, N = fidelity_vs_delay(merged, 0.0, delays, an.window_ps, an.subtract_accidentals,
                                (an.sideband_lo_ps, an.sideband_hi_ps))
    return delays, F, S, N


def write_tof_series(result: AnalysisResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_start_s", "t0_ps", "transit_change_ps"])
        for blk, t0, dt in zip(result.blocks, result.t0_series(), result.transit_change()):
            w.writerow([f"{blk.block_start:.1f}", f"{t0:.6f}", f"{dt:.6f}"])


def write_fidelity_series(result: AnalysisResult, path):
    """fidelity_timeseries.csv; skipped blocks appear as NaN rows so every block has a line."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIDELITY_COLUMNS)
        for blk in result.blocks:
            if blk.record is not None:
                w.writerow(fidelity_row(blk.record))
            else:
                w.writerow([f"{blk.block_start:.1f}"] + ["nan"] * 6 + [0] * 6)


def write_analysis(result: AnalysisResult, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_fidelity_series(result, out_dir / "fidelity_timeseries.csv")
    write_tof_series(result, out_dir / "tof_series.csv")


def analyze(event_log_path, cfg: ScenarioConfig, out_dir=None) -> AnalysisResult:
    """Re-analyze a persisted event log; writes the series into ``out_dir`` when given.

    The log is read and validated completely before anything is written.
    """
    _, events = read_events(event_log_path)
    result = analyze_events(events, cfg)
    if out_dir is not None:
        write_analysis(result, out_dir)
    return result

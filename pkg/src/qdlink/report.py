"""Figure data from a run directory.

fig2a.csv  normalized HH coincidences around the zero delay with the fitted peak
fig2b.csv  fidelity of a 48 ps window stepped away from the zero delay
fig3.csv   block fidelity and transit-time change versus day
fig4.csv   actuator voltages versus day
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import aligned_histograms, analyze, fig2b_series
from .coincidence import fit_cascade_peak, fit_oscillation_period
from .config import from_dict
from .errors import MissingArtifactError, NoPeakError
from .polarization import Basis
from .source import H_EV_S, PS_PER_S

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class ReportResult:
    text: str
    files: tuple
    fitted_period_ps: float
    expected_period_ps: float


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}")
    return path


def _read_rows(path):
    with open(_need(path), newline="") as fh:
        return list(csv.DictReader(fh))


def _event_log(run_dir: Path) -> Path:
    for name in ("events.bin", "events.csv"):
        if (run_dir / name).exists():
            return run_dir / name
    raise MissingArtifactError(f"missing artifact: {run_dir / 'events.csv'} (or events.bin)")


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x, spec=".6g"):
    return "nan" if not math.isfinite(x) else format(x, spec)


def report(run_dir, out_dir=None) -> ReportResult:
    """Write fig2a/fig2b/fig3/fig4 CSVs and return a short text summary."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    cfg = from_dict(json.loads(_need(run_dir / "config.json").read_text()), base_dir=run_dir)
    fid_rows = _read_rows(run_dir / "fidelity_timeseries.csv")
    tof_rows = _read_rows(run_dir / "tof_series.csv")
    act_rows = _read_rows(run_dir / "actuator_trace.csv")
    log_path = _event_log(run_dir)
    out.mkdir(parents=True, exist_ok=True)

    result = analyze(log_path, cfg)
    an = cfg.analysis
    merged = aligned_histograms(result, an.grid_ps)

    # fig2a
    hv = merged[Basis.HV]
    centers = hv.bin_centers
    norm = hv.normalized(0.0, (an.sideband_lo_ps, an.sideband_hi_ps), "hh")
    level = hv.sideband_level(0.0, (an.sideband_lo_ps, an.sideband_hi_ps), "hh")
    try:
        fit = fit_cascade_peak(hv, "hh", cfg.detector.jitter_fwhm_ps, cfg.source.x_lifetime_ps)
        model = fit.model(hv.edges) / level if level > 0 else np.full(len(centers), np.nan)
    except NoPeakError:
        model = np.full(len(centers), np.nan)
    _write(out / "fig2a.csv", ["delay_ps", "norm_coincidences_hh", "fit"],
           [[_fmt(c), _fmt(n), _fmt(m)] for c, n, m in zip(centers, norm, model)])

    # fig2b
    delays, F, S, N = fig2b_series(result, cfg)
    _write(out / "fig2b.csv", ["delay_ps", "F", "sigma_F", "n_window"],
           [[_fmt(d), _fmt(f), _fmt(s), int(n)] for d, f, s, n in zip(delays, F, S, N)])
    expected = H_EV_S / (cfg.source.fss_energy_uev * 1e-6) * PS_PER_S if cfg.source.fss_energy_uev else math.inf
    period = fig2b_period(delays, F, S, N)

    # fig3
    tof = {r["block_start_s"]: r for r in tof_rows}
    rows = []
    for r in fid_rows:
        t = float(r["block_start_s"])
        change = tof.get(r["block_start_s"], {}).get("transit_change_ps", "nan")
        rows.append([_fmt(t / SECONDS_PER_DAY, ".6f"), r["F"], r["sigma_F"], change])
    _write(out / "fig3.csv", ["day", "F", "sigma_F", "transit_change_ps"], rows)

    # fig4
    _write(out / "fig4.csv", ["day", "epc_v1", "epc_v2", "epc_v3", "epc_v4", "fwp_v"],
           [[_fmt(float(r["time_s"]) / SECONDS_PER_DAY, ".6f"), r["epc_v1"], r["epc_v2"], r["epc_v3"],
             r["epc_v4"], r["fwp_v"]] for r in act_rows])

    Fv = np.array([float(r["F"]) for r in fid_rows])
    Fv = Fv[np.isfinite(Fv)]
    lines = [
        f"run directory     {run_dir}",
        f"blocks            {len(fid_rows)} ({len(Fv)} with a fidelity)",
        f"mean F            {Fv.mean():.4f} +- {Fv.std(ddof=1):.4f}" if len(Fv) > 1 else "mean F            n/a",
        f"FSS period        fitted {period:.1f} ps, h/S {expected:.1f} ps",
    ]
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        duty = json.loads(summary_path.read_text()).get("duty")
        if duty:
            lines.append("duty              check-only {check_only_duty:.4f}, overall {overall_duty:.4f}, "
                         "recovery minutes {recovery_minute_duty:.4f}, maintenance {maintenance_fraction:.4f}"
                         .format(**{k: (v if v is not None else math.nan) for k, v in duty.items()}))
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    files = tuple(str(out / n) for n in ("fig2a.csv", "fig2b.csv", "fig3.csv", "fig4.csv", "report.txt"))
    return ReportResult(text, files, period, expected)


def fig2b_period(delays, F, sigma, n, min_delay_ps: float = 96.0, min_counts: int = 30) -> float:
    """Oscillation period of the fig2b series; NaN when too few usable points."""
    d = np.asarray(delays, float)
    ok = (d >= min_delay_ps) & (np.asarray(n) >= min_counts) & np.isfinite(F) & np.isfinite(sigma)
    try:
        return fit_oscillation_period(d[ok], np.asarray(F)[ok], np.asarray(sigma)[ok])
    except ValueError:
        return math.nan

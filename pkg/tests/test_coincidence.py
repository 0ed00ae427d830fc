import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import jones_operator, random_unit
from qdlink.coincidence import (
    FIDELITY_COLUMNS,
    FWHM_TO_SIGMA,
    BasisSchedule,
    CoincidenceHistogram,
    DetectionEvents,
    DetectorParams,
    PairBatch,
    basis_schedule,
    cascade_model,
    contrast,
    detect,
    fidelity_estimate,
    fidelity_vs_delay,
    fit_cascade_peak,
    fit_oscillation_period,
    fit_zero_delay,
    histogram,
    track_time_of_flight,
    write_fidelity_timeseries,
)
from qdlink.errors import NoPeakError, UndefinedContrastError, UndefinedFidelityError
from qdlink.polarization import (
    Arm,
    Basis,
    PolRotation,
    apply_rotation_one_arm,
    bell_diagonal_state,
    fidelity_to_phi_plus,
    outcome_probabilities,
    werner_state,
)
from qdlink.source import SourceParams, pair_state_at_delay

IDEAL = DetectorParams(jitter_fwhm_ps=0.0, efficiency=1.0, dark_rate_hz=0.0)
ONE_BASIS = {b: BasisSchedule(order=(b,)) for b in Basis}


def _hist_from_counts(basis, n_co, n_cross, delay=0.0):
    """Histogram whose coincidences all sit at one delay."""
    edges = 48 * np.arange(-2, 3, dtype=np.int64)
    co = np.full(int(n_co), float(delay))
    cr = np.full(int(n_cross), float(delay))
    z = np.zeros(4, np.int64)
    return CoincidenceHistogram(Basis(basis), 48, 0, edges, z, z, co, cr)


def _pairs(rng, n, span_s=10.0, delay_ps=None, **kw):
    xx = np.sort(rng.integers(0, int(span_s * 1e12), n))
    tau = np.zeros(n, np.int64) if delay_ps is None else np.rint(delay_ps).astype(np.int64)
    ones = np.ones(n, bool)
    return PairBatch(xx + tau, xx, ones, ones, **kw)


def _block(rng, rho, n, detector=IDEAL):
    """Histograms of n pairs per basis in state rho."""
    hists = {}
    for b in Basis:
        ev = detect(_pairs(rng, n, rho=rho), detector, ONE_BASIS[b], rng)
        hists[b] = histogram(ev, b, 25_000)
    return hists


# --- detector and schedule -----------------------------------------------------------------


def test_per_detector_jitter():
    assert DetectorParams().per_detector_sigma_ps == pytest.approx(70 / 2.3548200450309493 / math.sqrt(2))


def test_basis_schedule_examples():
    sched, segs = basis_schedule(1800.0)
    assert sched.basis_at(0.0) is Basis.HV
    assert sched.basis_at(601.0) is Basis.DA
    assert sched.basis_at(1201.0) is Basis.RL
    assert [s[2] for s in segs] == [Basis.HV, Basis.DA, Basis.RL]
    t = np.linspace(0, 1800, 97)
    assert np.array_equal(sched.basis_at(t), sched.basis_at(t + 1800.0))
    assert len(basis_schedule(3 * 86400.0)[1]) == 3 * 144


def test_guard_interval():
    sched = BasisSchedule(guard=2.0)
    assert not sched.active(600.5) and sched.active(602.0)


# --- Born sampling ---------------------------------------------------------------------------


def test_pair_probabilities_match_kernel(rng):
    params = SourceParams(mixing_p=0.8)
    for _ in range(20):
        tau = rng.uniform(0, 3000)
        axis, ang = random_unit(rng), rng.uniform(0, 2 * math.pi)
        u = jones_operator(axis, ang)
        rho = apply_rotation_one_arm(pair_state_at_delay(params, tau), PolRotation.from_rotvec(axis * ang), Arm.XX)
        batch = PairBatch(np.zeros(1, np.int64), np.zeros(1, np.int64), np.ones(1, bool), np.ones(1, bool),
                          phase=np.array([params.fss_angular_frequency * tau]), mixing=0.8, xx_jones=u)
        for bx in Basis:
            for bxx in Basis:
                assert np.allclose(batch.probabilities(bx, bxx)[0], outcome_probabilities(rho, bx, bxx), atol=1e-12)


def test_fixed_state_probabilities(rng):
    rho = bell_diagonal_state(rng.dirichlet(np.ones(4)))
    batch = _pairs(rng, 3, rho=rho)
    for b in Basis:
        assert np.allclose(batch.probabilities(b, b), outcome_probabilities(rho, b)[None, :], atol=1e-12)


def test_phi_plus_rl_gives_cross_only(rng):
    ev = detect(_pairs(rng, 2000), IDEAL, ONE_BASIS[Basis.RL], rng)
    h = histogram(ev, Basis.RL, 1000)
    assert h.counts_co.sum() == 0 and h.counts_cross.sum() == 2000


def test_jitter_fwhm(rng):
    det = DetectorParams(jitter_fwhm_ps=70.0, efficiency=1.0, dark_rate_hz=0.0)
    pairs = _pairs(rng, 100_000, span_s=100.0)
    ev = detect(pairs, det, ONE_BASIS[Basis.HV], rng)
    h = histogram(ev, Basis.HV, 1000)
    d = np.concatenate([h.delays_co, h.delays_cross])
    assert len(d) == 100_000
    assert d.std() / FWHM_TO_SIGMA == pytest.approx(70.0, abs=3.0)


def test_efficiency_and_dark_counts(rng):
    det = DetectorParams(jitter_fwhm_ps=0.0, efficiency=0.5, dark_rate_hz=1000.0)
    n = 40_000
    ev = detect(_pairs(rng, n), det, ONE_BASIS[Basis.HV], rng, dark_span_s=(0.0, 10.0))
    n_dark = 4 * 1000 * 10
    expected = 2 * n * 0.5 + n_dark
    assert abs(len(ev) - expected) <= 5 * math.sqrt(expected)
    assert ev.is_sorted()


def test_lost_photons_do_not_click(rng):
    n = 1000
    xx = np.arange(n, dtype=np.int64) * 1_000_000
    batch = PairBatch(xx, xx, np.zeros(n, bool), np.ones(n, bool))
    ev = detect(batch, IDEAL, ONE_BASIS[Basis.HV], rng)
    assert np.all(ev.detector >= 2) and len(ev) == n


# --- histogram -------------------------------------------------------------------------------


def test_empty_histogram():
    h = histogram(DetectionEvents.empty(), Basis.HV, 1000)
    assert h.counts_total.sum() == 0 and len(h.counts_co) == 2 * math.ceil(1000 / 48)


def test_single_pair_bin():
    ev = DetectionEvents.build([2, 0], [1000, 1100], [0, 0])
    h = histogram(ev, Basis.HV, 1000)
    k = int(np.flatnonzero(h.counts_co)[0])
    assert h.counts_co.sum() == 1 and h.counts_cross.sum() == 0
    assert h.bin_index(100) == 100 // 48
    assert h.edges[k] == 96 and h.counts_hh.sum() == 1


def test_cross_and_basis_separation():
    ev = DetectionEvents.build([3, 0, 2, 1], [1000, 1100, 5000, 5050], [1, 1, 2, 2])
    h_da = histogram(ev, Basis.DA, 1000)
    h_rl = histogram(ev, Basis.RL, 1000)
    assert h_da.counts_cross.sum() == 1 and h_da.counts_co.sum() == 0
    assert h_rl.counts_cross.sum() == 1


def test_unsorted_events_rejected():
    ev = DetectionEvents(np.array([0, 2], np.uint8), np.array([10, 5], np.int64), np.zeros(2, np.uint8))
    with pytest.raises(ValueError):
        histogram(ev, Basis.HV, 1000)


def test_accidental_level_matches_rate_oracle(rng):
    # uncorrelated clicks: X at rate rx, XX at rate rxx over T
    T, rx, rxx = 200.0, 20_000.0, 20_000.0
    nx, nxx = rng.poisson(rx * T), rng.poisson(rxx * T)
    tx = rng.integers(0, int(T * 1e12), nx)
    txx = rng.integers(0, int(T * 1e12), nxx)
    ev = DetectionEvents.build(
        np.concatenate([rng.integers(0, 2, nx), rng.integers(2, 4, nxx)]),
        np.concatenate([tx, txx]),
        np.zeros(nx + nxx),
    )
    h = histogram(ev, Basis.HV, 20_000)
    per_bin = nx * nxx / (T * 1e12) * 48
    far = np.abs(h.bin_centers) > 5000
    co, cr = h.counts_co[far].sum(), h.counts_cross[far].sum()
    assert abs(co - cr) <= 4 * math.sqrt(co + cr)
    assert (co + cr) / far.sum() == pytest.approx(per_bin, rel=4 / math.sqrt(co + cr) + 0.01)


# --- zero-delay fit -------------------------------------------------------------------------


def _synthetic_peak(rng, t0, n=20_000, bg_per_bin=3.0, tau=600.0, halfwidth=10_000):
    sigma = 70.0 * FWHM_TO_SIGMA
    edges = 48 * np.arange(-math.ceil(halfwidth / 48), math.ceil(halfwidth / 48) + 1)
    expected = cascade_model(edges, t0, n, tau, bg_per_bin, sigma)
    counts = rng.poisson(expected)
    z = np.zeros(0)
    return CoincidenceHistogram(Basis.HV, 48, 0, edges, counts, np.zeros_like(counts), z, z)


def test_fit_recovers_t0(rng):
    h = _synthetic_peak(rng, 1234.0)
    fit = fit_cascade_peak(h)
    assert abs(fit.t0 - 1234.0) <= 24.0
    assert fit.tau == pytest.approx(600.0, rel=0.1)


def test_fit_shift_equivariance(rng):
    a = fit_zero_delay(_synthetic_peak(np.random.default_rng(1), 1234.0))
    b = fit_zero_delay(_synthetic_peak(np.random.default_rng(1), 1234.0 + 480.0))
    assert b - a == pytest.approx(480.0, abs=24.0)


def test_fit_on_event_stream(rng):
    n = 20_000
    det = DetectorParams(jitter_fwhm_ps=70.0, efficiency=1.0, dark_rate_hz=0.0)
    pairs = _pairs(rng, n, span_s=5.0, delay_ps=-3000 + rng.exponential(600.0, n))
    h = histogram(detect(pairs, det, ONE_BASIS[Basis.HV], rng), Basis.HV, 10_000, center_ps=-3000)
    assert abs(fit_zero_delay(h) + 3000) <= 24.0


def test_fit_without_peak():
    z = np.zeros(0)
    edges = 48 * np.arange(-20, 21)
    empty = CoincidenceHistogram(Basis.HV, 48, 0, edges, np.zeros(40, int), np.zeros(40, int), z, z)
    with pytest.raises(NoPeakError):
        fit_zero_delay(empty)
    flat = CoincidenceHistogram(Basis.HV, 48, 0, edges, np.full(40, 10), np.zeros(40, int), z, z)
    with pytest.raises(NoPeakError):
        fit_zero_delay(flat)


# --- contrast and fidelity -------------------------------------------------------------------


@pytest.mark.parametrize("co, cross, c", [(100, 0, 1.0), (50, 50, 0.0), (75, 25, 0.5)])
def test_contrast_examples(co, cross, c):
    assert contrast(co, cross) == pytest.approx(c)


def test_contrast_undefined():
    with pytest.raises(UndefinedContrastError):
        contrast(0, 0)


def test_ideal_counts_give_unit_fidelity():
    n = 400
    hists = [_hist_from_counts(Basis.HV, n, 0), _hist_from_counts(Basis.DA, n, 0), _hist_from_counts(Basis.RL, 0, n)]
    rec = fidelity_estimate(hists, 0.0, subtract_accidentals=False)
    assert rec.fidelity == 1.0 and rec.sigma == 0.0


def test_balanced_counts_give_quarter():
    hists = [_hist_from_counts(b, 250, 250) for b in Basis]
    rec = fidelity_estimate(hists, 0.0, subtract_accidentals=False)
    assert rec.fidelity == pytest.approx(0.25)
    # sigma of a contrast at c = x = n/2: sqrt(1/n); three bases in quadrature, over 4
    assert rec.sigma == pytest.approx(math.sqrt(3 / 500) / 4)


def test_empty_window_is_undefined():
    hists = [_hist_from_counts(Basis.HV, 10, 0), _hist_from_counts(Basis.DA, 10, 0), _hist_from_counts(Basis.RL, 0, 0)]
    with pytest.raises(UndefinedFidelityError):
        fidelity_estimate(hists, 0.0)


def test_window_is_centered_on_t0():
    h = _hist_from_counts(Basis.HV, 10, 0, delay=500.0)
    hists = [h, _hist_from_counts(Basis.DA, 10, 0, 500.0), _hist_from_counts(Basis.RL, 0, 10, 500.0)]
    assert fidelity_estimate(hists, 500.0 - 23.9, subtract_accidentals=False).fidelity == 1.0
    with pytest.raises(UndefinedFidelityError):
        fidelity_estimate(hists, 500.0 - 24.1, subtract_accidentals=False)


def test_estimator_matches_exact_fidelity(rng):
    for _ in range(5):
        rho = bell_diagonal_state(rng.dirichlet(np.ones(4)))
        hists = _block(rng, rho, 100_000)
        rec = fidelity_estimate(hists, 0.0, subtract_accidentals=False)
        assert sum(c.n_co + c.n_cross for c in rec.counts) == 300_000
        assert abs(rec.fidelity - fidelity_to_phi_plus(rho)) <= 3.5 * rec.sigma


def test_accidental_subtraction_restores_contrast(rng):
    # a 2 ns window collects about one accidental per ten true coincidences
    rho = werner_state(0.9)
    det = DetectorParams(jitter_fwhm_ps=0.0, efficiency=1.0, dark_rate_hz=200_000.0)
    hists = {}
    for b in Basis:
        ev = detect(_pairs(rng, 3000, span_s=1.0, rho=rho), det, ONE_BASIS[b], rng, dark_span_s=(0.0, 1.0))
        hists[b] = histogram(ev, b, 25_000)
    raw = fidelity_estimate(hists, 0.0, 2000.0, subtract_accidentals=False)
    sub = fidelity_estimate(hists, 0.0, 2000.0, subtract_accidentals=True)
    exact = fidelity_to_phi_plus(rho)
    assert raw.fidelity < exact - 3 * raw.sigma
    assert abs(sub.fidelity - exact) <= 3 * sub.sigma
    assert sub.sigma > raw.sigma


def test_port_relabeling(rng):
    rho = bell_diagonal_state([0.7, 0.1, 0.15, 0.05])
    events = {b: detect(_pairs(rng, 20_000, rho=rho), IDEAL, ONE_BASIS[b], rng) for b in Basis}

    def estimate(swap):
        hists = {}
        for b, ev in events.items():
            det = swap[ev.detector]
            hists[b] = histogram(DetectionEvents.build(det, ev.timestamp_ps, ev.basis), b, 1000)
        return fidelity_estimate(hists, 0.0, subtract_accidentals=False)

    base = estimate(np.array([0, 1, 2, 3]))
    both = estimate(np.array([1, 0, 3, 2]))
    x_only = estimate(np.array([1, 0, 2, 3]))
    assert both.fidelity == base.fidelity
    # swapping one side exchanges co and cross, so every contrast flips sign
    assert np.allclose(x_only.contrasts, -np.array(base.contrasts))
    swapped_back = (1 - x_only.contrasts[0] - x_only.contrasts[1] + x_only.contrasts[2]) / 4
    assert swapped_back == pytest.approx(base.fidelity)


def test_post_selection_beats_wide_window(rng):
    params = SourceParams(mixing_p=1.0, fss_energy_uev=2.0)
    n = 60_000
    hists = {}
    for b in Basis:
        tau = rng.exponential(params.x_lifetime_ps, n)
        pairs = _pairs(rng, n, delay_ps=tau, phase=params.fss_angular_frequency * np.rint(tau), mixing=1.0)
        hists[b] = histogram(detect(pairs, IDEAL, ONE_BASIS[b], rng), b, 25_000)
    narrow = fidelity_estimate(hists, 24.0, 48.0, subtract_accidentals=False)
    wide = fidelity_estimate(hists, 10_000.0, 20_000.0, subtract_accidentals=False)
    assert narrow.fidelity > wide.fidelity + 3 * math.hypot(narrow.sigma, wide.sigma)
    lorentz = 0.5 * (1 + 1 / (1 + (params.fss_angular_frequency * params.x_lifetime_ps) ** 2))
    assert wide.fidelity == pytest.approx(lorentz, abs=4 * wide.sigma)


def test_reported_sigma_matches_scatter():
    rng = np.random.default_rng(5)
    rho = werner_state(0.85)
    det = DetectorParams(jitter_fwhm_ps=70.0, efficiency=1.0, dark_rate_hz=2000.0)
    F, S = [], []
    for _ in range(200):
        hists = {}
        for b in Basis:
            ev = detect(_pairs(rng, 2000, span_s=5.0, rho=rho), det, ONE_BASIS[b], rng, dark_span_s=(0.0, 5.0))
            hists[b] = histogram(ev, b, 25_000)
        rec = fidelity_estimate(hists, 0.0)
        F.append(rec.fidelity)
        S.append(rec.sigma)
    assert np.std(F, ddof=1) == pytest.approx(np.mean(S), rel=0.2)


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_contrast_bounded(co, cross):
    if co + cross:
        assert -1.0 <= contrast(co, cross) <= 1.0


# --- time of flight and delay scans ---------------------------------------------------------


def _record(t0):
    hists = [_hist_from_counts(b, 90, 10, delay=t0) for b in Basis]
    return fidelity_estimate(hists, t0, subtract_accidentals=False)


def test_track_time_of_flight():
    flat = track_time_of_flight([_record(100.0) for _ in range(5)])
    assert np.all(np.abs(flat) <= 24.0)
    ramp = np.linspace(0, 1820, 20)
    assert np.allclose(track_time_of_flight([_record(t) for t in ramp]), ramp)
    step = track_time_of_flight([_record(0.0), _record(0.0), _record(10_000.0)])
    assert step[-1] == pytest.approx(10_000.0)
    with pytest.raises(ValueError):
        track_time_of_flight([])


def test_fidelity_vs_delay_period(rng):
    params = SourceParams(mixing_p=1.0, fss_energy_uev=2.0, x_lifetime_ps=3000.0)
    n = 150_000
    hists = {}
    for b in Basis:
        tau = rng.exponential(params.x_lifetime_ps, n)
        pairs = _pairs(rng, n, span_s=50.0, delay_ps=tau, phase=params.fss_angular_frequency * np.rint(tau))
        hists[b] = histogram(detect(pairs, IDEAL, ONE_BASIS[b], rng), b, 25_000)
    d = np.arange(24.0, 6000.0, 48.0)
    F, S, N = fidelity_vs_delay(hists, 0.0, d, subtract_accidentals=False)
    assert np.all(N > 0)
    T = fit_oscillation_period(d, F, S)
    assert T == pytest.approx(params.oscillation_period_ps, rel=0.02)


def test_period_fit_on_exact_cosine():
    d = np.linspace(0, 5000, 120)
    F = 0.6 + 0.35 * np.cos(2 * np.pi * d / 1377.0 + 0.4)
    assert fit_oscillation_period(d, F, np.full_like(d, 0.01)) == pytest.approx(1377.0, rel=1e-6)
    with pytest.raises(ValueError):
        fit_oscillation_period(d[:3], F[:3], np.full(3, 0.01))


def test_fidelity_timeseries_columns(tmp_path):
    path = tmp_path / "f.csv"
    write_fidelity_timeseries([_record(10.0), _record(20.0)], path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == FIDELITY_COLUMNS
    assert len(lines) == 3
    assert float(lines[1].split(",")[FIDELITY_COLUMNS.index("t0_ps")]) == 10.0


def test_detection_events_helpers(rng):
    a = DetectionEvents.build([0, 2], [30, 10], [0, 0])
    b = DetectionEvents.build([1], [20], [0])
    c = DetectionEvents.concat([a, b, DetectionEvents.empty()])
    assert c.timestamp_ps.tolist() == [10, 20, 30] and c.detector.tolist() == [2, 1, 0]
    assert c.time_slice(15, 30).timestamp_ps.tolist() == [20]
    assert c.equals(DetectionEvents.concat([b, a]))

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from qdlink.errors import DomainError
from qdlink.polarization import fidelity_to_phi_plus
from qdlink.source import (
    SourceParams,
    calibrate_mixing_for_local_fidelity,
    emit_pairs,
    fss_phase,
    mean_pure_fidelity,
    pair_state_at_delay,
)

PLANCK_EV_S = 6.62607015e-34 / 1.602176634e-19  # exact SI values


def test_zero_delay_pure_source_is_phi_plus():
    rho = pair_state_at_delay(SourceParams(mixing_p=1.0), 0.0)
    assert fidelity_to_phi_plus(rho) == pytest.approx(1.0)


def test_oscillation_period_from_constants():
    p = SourceParams(fss_energy_uev=2.0)
    assert p.oscillation_period_ps == pytest.approx(PLANCK_EV_S / 2e-6 * 1e12, rel=1e-9)
    assert p.oscillation_period_ps == pytest.approx(2068, abs=1)


def test_half_period_gives_zero_fidelity():
    p = SourceParams(fss_energy_uev=2.0, mixing_p=1.0)
    tau = p.oscillation_period_ps / 2
    assert tau == pytest.approx(1034, abs=0.5)
    assert fidelity_to_phi_plus(pair_state_at_delay(p, tau)) == pytest.approx(0.0, abs=1e-12)


def test_fully_mixed_source():
    rho = pair_state_at_delay(SourceParams(mixing_p=0.0), 321.0)
    assert np.allclose(rho.rho, np.eye(4) / 4)
    assert fidelity_to_phi_plus(rho) == pytest.approx(0.25)


def test_negative_delay_rejected():
    with pytest.raises(DomainError):
        pair_state_at_delay(SourceParams(), -1.0)


@given(st.floats(0, 50_000), st.floats(0.1, 10), st.floats(0, 1))
def test_pure_part_fidelity_follows_phase(tau, S, p):
    params = SourceParams(fss_energy_uev=S, mixing_p=p)
    phi = S * 1e-6 * tau * 1e-12 / (PLANCK_EV_S / (2 * math.pi))
    F = fidelity_to_phi_plus(pair_state_at_delay(params, tau))
    assert F == pytest.approx(p * (1 + math.cos(phi)) / 2 + (1 - p) / 4, abs=1e-9)


@given(st.floats(0, 20_000), st.floats(0.5, 5))
def test_state_periodic_in_phase(tau, S):
    params = SourceParams(fss_energy_uev=S, mixing_p=0.8)
    a = pair_state_at_delay(params, tau)
    b = pair_state_at_delay(params, tau + params.oscillation_period_ps)
    assert a.allclose(b, atol=1e-10)


def test_time_averaged_fidelity_matches_lorentzian(rng):
    params = SourceParams(fss_energy_uev=2.0, x_lifetime_ps=600.0)
    tau = rng.exponential(params.x_lifetime_ps, 1_000_000)
    f = 0.5 * (1 + np.cos(fss_phase(params, tau)))
    oracle = 0.5 * (1 + 1 / (1 + (params.fss_angular_frequency * params.x_lifetime_ps) ** 2))
    assert mean_pure_fidelity(params) == pytest.approx(oracle, rel=1e-12)
    assert abs(f.mean() - oracle) <= 3 * f.std() / math.sqrt(len(f))


def test_zero_rate_gives_empty_stream():
    assert len(emit_pairs(SourceParams(pair_rate=0.0), 0.0, 10.0, 1)) == 0


def test_pair_count_is_poissonian():
    s = emit_pairs(SourceParams(pair_rate=1000.0), 0.0, 1.0, 7)
    assert abs(len(s) - 1000) <= 5 * math.sqrt(1000)


def test_same_seed_same_stream():
    p = SourceParams()
    assert emit_pairs(p, 0.0, 2.0, 99).equals(emit_pairs(p, 0.0, 2.0, 99))
    assert not emit_pairs(p, 0.0, 2.0, 99).equals(emit_pairs(p, 0.0, 2.0, 100))


def test_stream_sorted_and_events_consistent():
    s = emit_pairs(SourceParams(pair_rate=500.0), 1.0, 3.0, 3)
    assert np.all(np.diff(s.xx_emit_ps) >= 0)
    assert s.xx_emit_ps.min() >= 1_000_000_000_000 and s.xx_emit_ps.max() < 3_000_000_000_000
    ev = s[5]
    assert ev.delay_ps == pytest.approx(s.delay_ps[5])
    assert ev.state_at_emission.allclose(pair_state_at_delay(s.params, s.delay_ps[5]))


def test_inverted_interval_rejected():
    with pytest.raises(DomainError):
        emit_pairs(SourceParams(), 2.0, 1.0, 0)


def test_inter_arrival_times_exponential():
    rate = 1e4
    s = emit_pairs(SourceParams(pair_rate=rate), 0.0, 11.0, 11)
    gaps = np.diff(s.xx_emit_ps[:100_001]) / 1e12
    assert len(gaps) == 100_000
    assert stats.kstest(gaps, "expon", args=(0, 1 / rate)).pvalue > 0.01


def test_cascade_delay_exponential():
    s = emit_pairs(SourceParams(pair_rate=1e4, x_lifetime_ps=600.0), 0.0, 5.0, 12)
    assert stats.kstest(s.delay_ps, "expon", args=(0, 600.0)).pvalue > 0.01


def test_calibrate_mixing():
    assert calibrate_mixing_for_local_fidelity(1.0) == pytest.approx(1.0)
    assert calibrate_mixing_for_local_fidelity(0.25) == pytest.approx(0.0)
    p = calibrate_mixing_for_local_fidelity(0.947)
    assert (1 + 3 * p) / 4 == pytest.approx(0.947)
    assert p == pytest.approx(0.92933, abs=1e-5)
    with pytest.raises(DomainError):
        calibrate_mixing_for_local_fidelity(0.2)

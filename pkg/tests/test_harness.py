import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdlink.analysis import analyze
from qdlink.cli import main
from qdlink.coincidence import DetectionEvents
from qdlink.config import ScenarioConfig, from_dict, load_config
from qdlink.errors import ConfigError, MissingArtifactError, SchemaError
from qdlink.eventlog import read_events, write_events
from qdlink.report import report
from qdlink.simulate import run_scenario

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SHORT = {"horizon_s": 7200.0, "event_log_format": "csv"}


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("short")
    cfg = ScenarioConfig().replace(scenario=SHORT)
    return run_scenario(cfg, out_dir=out)


# --- configuration ---------------------------------------------------------------------------


def test_committed_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(path)
        assert cfg.scenario.horizon_s > 0
    week = load_config(CONFIGS / "week.toml")
    defaults = ScenarioConfig()
    # the week file spells out the package defaults apart from the log format
    w, d = week.to_dict(), defaults.to_dict()
    assert w["scenario"].pop("event_log_format") == "binary"
    d["scenario"].pop("event_log_format")
    assert w["source"].pop("mixing_p") == pytest.approx(d["source"].pop("mixing_p"), rel=1e-12)
    assert w == d
    assert defaults.scenario.horizon_s == 7 * 86400
    assert (1 + 3 * defaults.source.mixing_p) / 4 == pytest.approx(0.947)


@pytest.mark.parametrize(
    "data, key",
    [
        ({"source": {"pair_rate": 10.0}}, "source.pair_rate"),
        ({"sources": {}}, "sources"),
        ({"source": {"pair_rate_hz": "fast"}}, "source.pair_rate_hz"),
        ({"source": {"mixing_p": 1.5}}, "source.mixing_p"),
        ({"scenario": {"horizon_s": 8 * 86400.0}}, "scenario.horizon_s"),
        ({"scenario": {"link": "satellite"}}, "scenario.link"),
        ({"scenario": {"channel_step_s": 7.0}}, "scenario.channel_step_s"),
        ({"stabilizer": {"enabled": 1}}, "stabilizer.enabled"),
        ({"detector": {"efficiency": 0.0}}, "detector.efficiency"),
        ({"analysis": {"halfwidth_ps": 20_500.0}}, "analysis.halfwidth_ps"),
    ],
)
def test_config_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as info:
        from_dict(data)
    assert info.value.key == key
    assert key in str(info.value)


def test_config_syntax_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[scenario\nseed = 1\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.key == "<syntax>"


def test_temperature_csv_resolves_next_to_config(tmp_path):
    (tmp_path / "temps.csv").write_text("time_s,temp_C\n0,0\n86400,1\n")
    (tmp_path / "c.toml").write_text('[channel]\ntemperature_csv = "temps.csv"\n')
    cfg = load_config(tmp_path / "c.toml")
    assert Path(cfg.channel.temperature_csv).is_absolute()
    p = cfg.channel_params()
    assert p.temperature_profile(43200.0) == pytest.approx(0.5)
    # the stored path survives a round trip through config.json elsewhere
    assert from_dict(cfg.to_dict(), base_dir="/").channel_params().temperature_profile(86400.0) == 1.0


def test_config_hash_tracks_content():
    a, b = ScenarioConfig(), ScenarioConfig()
    assert a.hash() == b.hash()
    assert a.replace(scenario={"seed": 2}).hash() != a.hash()


# --- event log -------------------------------------------------------------------------------


events_strategy = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 2**62), st.integers(0, 2)), max_size=50
).map(lambda rows: DetectionEvents.build(*zip(*rows)) if rows else DetectionEvents.empty())


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
@given(ev=events_strategy)
def test_event_log_round_trip(tmp_path_factory, suffix, ev):
    path = tmp_path_factory.mktemp("log") / f"events{suffix}"
    write_events(ev, path, seed=7, config_hash="abc")
    header, back = read_events(path)
    assert back.equals(ev)
    assert (header.seed, header.config_hash, header.count) == (7, "abc", len(ev))


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_truncated_log_is_a_schema_error(tmp_path, suffix):
    ev = DetectionEvents.build([0, 2, 1], [10, 20, 30], [0, 0, 1])
    path = write_events(ev, tmp_path / f"events{suffix}", 1, "h")
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(SchemaError):
        read_events(path)
    out = tmp_path / "out"
    with pytest.raises(SchemaError):
        analyze(path, ScenarioConfig().replace(scenario={"horizon_s": 1800.0}), out_dir=out)
    assert not out.exists()


def test_log_schema_checks(tmp_path):
    ev = DetectionEvents.build([0, 2], [10, 20], [0, 0])
    path = write_events(ev, tmp_path / "e.csv", 1, "h")
    text = path.read_text()
    for bad in (
        text.replace("v1", "v2", 1),
        text.replace("20,0", "5,0"),  # unsorted
        text.replace("2,20,0", "7,20,0"),  # detector id
        text.replace("count=2", "count=3"),
        text.replace("2,20,0", "2,x,0"),
    ):
        path.write_text(bad)
        with pytest.raises(SchemaError):
            read_events(path)


# --- scenario ------------------------------------------------------------------------------


def test_artifact_set(short_run):
    names = {p.name for p in short_run.out_dir.iterdir()}
    assert {"events.csv", "fidelity_timeseries.csv", "tof_series.csv", "tof_truth.csv", "actuator_trace.csv",
            "duty_log.csv", "summary.json", "config.json"} <= names
    s = json.loads((short_run.out_dir / "summary.json").read_text())
    assert s["n_blocks"] == 4 and s["n_valid_blocks"] == 4
    assert 0.9 < s["mean_F"] < 0.97
    assert s["duty"]["check_only_duty"] == pytest.approx(59.5 / 60)


def test_same_seed_same_bytes(short_run, tmp_path):
    run_scenario(short_run.config, out_dir=tmp_path)
    for p in short_run.out_dir.iterdir():
        assert filecmp.cmp(p, tmp_path / p.name, shallow=False), p.name


def test_different_seed_different_events(short_run):
    other = run_scenario(short_run.config.replace(scenario={"seed": 2}))
    assert not other.events.equals(short_run.events)


def test_time_accounting_is_exhaustive(short_run):
    total = sum(r.duration for r in short_run.stabilizer_log.records
                if r.kind in ("check", "recovery", "realign", "transmission"))
    assert total == pytest.approx(short_run.config.scenario.horizon_s, abs=1e-6)


def test_offline_analysis_equals_inline(short_run, tmp_path):
    cfg = short_run.config
    result = analyze(short_run.out_dir / "events.csv", cfg, out_dir=tmp_path)
    assert np.array_equal(result.fidelities(), short_run.analysis.fidelities())
    for name in ("fidelity_timeseries.csv", "tof_series.csv"):
        assert filecmp.cmp(tmp_path / name, short_run.out_dir / name, shallow=False)


def test_feedback_beats_frozen_actuators():
    cfg = ScenarioConfig().replace(scenario={"horizon_s": 43200.0, "write_event_log": False})
    on = run_scenario(cfg).summary["mean_F"]
    off = run_scenario(cfg.replace(stabilizer={"enabled": False})).summary["mean_F"]
    assert off < on


def test_acceleration_soundness():
    # pair_rate x horizon fixed: (1000/s, 1 h) against (2000/s, 30 min), local link
    base = ScenarioConfig().replace(scenario={"link": "local", "write_event_log": False})
    a, b = [], []
    for seed in range(10):
        ra = run_scenario(base.replace(scenario={"seed": seed, "horizon_s": 3600.0}))
        rb = run_scenario(base.replace(scenario={"seed": 100 + seed, "horizon_s": 1800.0},
                                       source={"pair_rate_hz": 2000.0}))
        a.append(ra.summary["mean_F"])
        b.append(rb.summary["mean_F"])
    diff = np.mean(a) - np.mean(b)
    err = math.sqrt(np.var(a, ddof=1) / len(a) + np.var(b, ddof=1) / len(b))
    assert abs(diff) <= 2 * err


# --- report ----------------------------------------------------------------------------------


def test_report_files(short_run, tmp_path):
    res = report(short_run.out_dir, out_dir=tmp_path)
    for name in ("fig2a.csv", "fig2b.csv", "fig3.csv", "fig4.csv", "report.txt"):
        assert (tmp_path / name).exists()
    fig3 = (tmp_path / "fig3.csv").read_text().splitlines()
    assert len(fig3) - 1 == 4
    assert fig3[0] == "day,F,sigma_F,transit_change_ps"
    fig2a = np.genfromtxt(tmp_path / "fig2a.csv", delimiter=",", names=True)
    assert fig2a["delay_ps"][np.nanargmax(fig2a["norm_coincidences_hh"])] == pytest.approx(0.0, abs=200)
    assert "mean F" in res.text


def test_report_names_missing_artifact(short_run, tmp_path):
    for p in short_run.out_dir.iterdir():
        if p.name != "tof_series.csv":
            (tmp_path / p.name).write_bytes(p.read_bytes())
    with pytest.raises(MissingArtifactError) as info:
        report(tmp_path)
    assert "tof_series.csv" in str(info.value)


# --- command line ----------------------------------------------------------------------------


def _toml(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_round_trip(tmp_path, capsys):
    cfg = _toml(tmp_path, '[scenario]\nhorizon_s = 3600.0\nevent_log_format = "csv"\n')
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["scenario"]["seed"] == 3
    assert main(["analyze", "--log", str(out / "events.csv"), "--config", str(out / "config.json")]) == 2
    assert main(["analyze", "--log", str(out / "events.csv"), "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["report", "--dir", str(out)]) == 0
    assert (out / "fig3.csv").exists()
    capsys.readouterr()


def test_cli_config_error(tmp_path, capsys):
    cfg = _toml(tmp_path, "[source]\nmixing_p = 2.0\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "source.mixing_p" in capsys.readouterr().err


def test_cli_io_errors(tmp_path, capsys):
    cfg = _toml(tmp_path, "[scenario]\nhorizon_s = 1800.0\n")
    assert main(["analyze", "--log", str(tmp_path / "missing.csv"), "--config", cfg]) == 3
    assert main(["report", "--dir", str(tmp_path)]) == 3
    path = write_events(DetectionEvents.build([0], [5], [0]), tmp_path / "e.csv", 1, "h")
    path.write_bytes(path.read_bytes()[:-2])
    assert main(["analyze", "--log", str(path), "--config", cfg]) == 3
    capsys.readouterr()


def test_cli_analysis_precondition(tmp_path, capsys):
    # uncorrelated clicks: plenty of coincidences, flat in delay, no cascade peak
    rng = np.random.default_rng(0)
    n = 20_000
    t_x = rng.integers(0, 1800 * 10**12, n)
    t_xx = t_x + rng.integers(-25_000, 25_000, n)
    det = np.concatenate([rng.integers(0, 2, n), rng.integers(2, 4, n)])
    t = np.concatenate([t_x, t_xx])
    basis = np.tile(rng.integers(0, 3, n), 2)
    order = np.argsort(t, kind="stable")
    ev = DetectionEvents.build(det[order], t[order], basis[order])
    log = write_events(ev, tmp_path / "dark.csv", 1, "h")
    cfg = _toml(tmp_path, '[scenario]\nhorizon_s = 1800.0\nlink = "local"\n')
    assert main(["analyze", "--log", str(log), "--config", cfg]) == 4
    capsys.readouterr()


def test_cli_empty_log(tmp_path, capsys):
    log = write_events(DetectionEvents.empty(), tmp_path / "empty.csv", 1, "h")
    cfg = _toml(tmp_path, "[scenario]\nhorizon_s = 3600.0\n")
    assert main(["analyze", "--log", str(log), "--config", cfg]) == 0
    rows = (tmp_path / "fidelity_timeseries.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[1].split(",")[1] == "nan"
    assert "no coincidences" in capsys.readouterr().out

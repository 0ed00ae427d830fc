"""Scenario configuration: TOML file -> nested dataclasses.

Every key carries its unit in the name (``*_s``, ``*_ps``, ``*_db``, ...).
Unknown keys and out-of-range values raise :class:`ConfigError` naming the
offending key as ``section.key``.  Omitted keys take the defaults below,
which reproduce the week-long field scenario.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .channel import DEFAULT_TOF_THERMAL_PS_PER_C, ChannelParams, CsvTemperatureProfile
from .coincidence import BasisSchedule, DetectorParams
from .errors import ConfigError, DomainError
from .source import SourceParams, calibrate_mixing_for_local_fidelity
from .stabilizer import StabilizerSchedule

LOCAL_BENCHMARK_FIDELITY = 0.947


@dataclass
class ScenarioSection:
    horizon_s: float = 7 * 86400.0
    seed: int = 1
    link: str = "field"  # field | local
    acceleration: float = 1000.0
    channel_step_s: float = 10.0
    event_log_format: str = "csv"  # csv | binary
    write_event_log: bool = True


@dataclass
class SourceSection:
    pair_rate_hz: float = 1000.0
    x_lifetime_ps: float = 600.0
    fss_energy_uev: float = 2.0
    mixing_p: float = calibrate_mixing_for_local_fidelity(LOCAL_BENCHMARK_FIDELITY)
    x_wavelength_nm: float = 1329.4
    xx_wavelength_nm: float = 1320.0


@dataclass
class ChannelSection:
    length_km: float = 18.23
    fiber_loss_db: float = 11.70
    component_loss_db: float = 3.49
    group_index: float = 1.4677
    drift_angle_rate_rad_per_sqrt_h: float = 0.25
    diurnal_amplitude_rad: float = 0.6
    diurnal_period_h: float = 24.0
    thermal_rotation_rad_per_c: float = 0.15
    wavelength_decorr_deg_per_nm: float = 20.0
    wavelength_decorr_time_h: float = 12.0
    tof_thermal_ps_per_c: float = DEFAULT_TOF_THERMAL_PS_PER_C
    temperature_csv: str = ""


@dataclass
class StabilizerSection:
    enabled: bool = True
    check_period_s: float = 60.0
    check_duration_s: float = 0.5
    eta_threshold: float = 0.985
    forced_realign_period_s: float = 660.0
    actuation_step_latency_s: float = 1.2
    realign_target: float = 0.995
    max_steps: int = 4000
    meter_noise_rel: float = 0.001
    reference_wavelength_nm: float = 1320.0


@dataclass
class DetectorSection:
    jitter_fwhm_ps: float = 70.0
    efficiency: float = 0.5
    dark_rate_hz: float = 100.0


@dataclass
class AnalysisSection:
    block_s: float = 1800.0
    switch_period_s: float = 600.0
    guard_s: float = 0.0
    window_ps: float = 48.0
    grid_ps: int = 48
    halfwidth_ps: float = 25_000.0
    sideband_lo_ps: float = 5_000.0
    sideband_hi_ps: float = 20_000.0
    subtract_accidentals: bool = True
    fig2b_max_delay_ps: float = 4_000.0


@dataclass
class ScenarioConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    source: SourceSection = field(default_factory=SourceSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    stabilizer: StabilizerSection = field(default_factory=StabilizerSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    base_dir: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        validate(self)

    # --- conversion to module parameter objects ---

    def source_params(self) -> SourceParams:
        s = self.source
        return SourceParams(s.pair_rate_hz, s.x_lifetime_ps, s.fss_energy_uev, s.mixing_p,
                            s.x_wavelength_nm, s.xx_wavelength_nm)

    def channel_params(self) -> ChannelParams:
        c = self.channel
        kw = dict(
            length_km=c.length_km, fiber_loss_db=c.fiber_loss_db, component_loss_db=c.component_loss_db,
            group_index=c.group_index, drift_angle_rate=c.drift_angle_rate_rad_per_sqrt_h,
            diurnal_amplitude=c.diurnal_amplitude_rad, diurnal_period_h=c.diurnal_period_h,
            thermal_rotation_rad_per_c=c.thermal_rotation_rad_per_c,
            wavelength_decorr_deg_per_nm=c.wavelength_decorr_deg_per_nm,
            wavelength_decorr_time_h=c.wavelength_decorr_time_h,
            reference_wavelength_nm=self.source.xx_wavelength_nm,
            tof_thermal_ps_per_c=c.tof_thermal_ps_per_c,
        )
        if c.temperature_csv:
            path = Path(c.temperature_csv)
            if not path.is_absolute() and self.base_dir:
                path = Path(self.base_dir) / path
            kw["temperature_profile"] = CsvTemperatureProfile.from_csv(path)
        return ChannelParams(**kw)

    def schedule(self) -> StabilizerSchedule:
        s = self.stabilizer
        return StabilizerSchedule(
            check_period=s.check_period_s, check_duration=s.check_duration_s,
            eta_threshold=s.eta_threshold, forced_realign_period=s.forced_realign_period_s,
            actuation_step_latency=s.actuation_step_latency_s, realign_target=s.realign_target,
            max_steps=s.max_steps,
        )

    def detector_params(self) -> DetectorParams:
        d = self.detector
        return DetectorParams(d.jitter_fwhm_ps, d.efficiency, d.dark_rate_hz)

    def basis_schedule(self) -> BasisSchedule:
        return BasisSchedule(self.analysis.switch_period_s, self.analysis.guard_s)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir", None)
        return d

    def hash(self) -> str:
        """sha256 of the canonical JSON form; the output directory is not part of it."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections) -> "ScenarioConfig":
        """Copy with some keys changed: ``cfg.replace(scenario={"seed": 3})``."""
        d = self.to_dict()
        for name, updates in sections.items():
            if name not in d:
                raise ConfigError(name, "unknown section")
            for k, v in updates.items():
                if k not in d[name]:
                    raise ConfigError(f"{name}.{k}", "unknown key")
                d[name][k] = v
        return from_dict(d, base_dir=self.base_dir)


_SECTIONS = {
    "scenario": ScenarioSection,
    "source": SourceSection,
    "channel": ChannelSection,
    "stabilizer": StabilizerSection,
    "detector": DetectorSection,
    "analysis": AnalysisSection,
}


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(data: dict, base_dir=None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a table")
    sections = {}
    for name, value in data.items():
        if name not in _SECTIONS:
            raise ConfigError(name, "unknown section")
        if not isinstance(value, dict):
            raise ConfigError(name, "expected a table")
        cls = _SECTIONS[name]
        defaults = cls()
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in value.items():
            key = f"{name}.{k}"
            if k not in names:
                raise ConfigError(key, "unknown key")
            kw[k] = _coerce(key, v, getattr(defaults, k))
        sections[name] = cls(**kw)
    return ScenarioConfig(**sections, base_dir=None if base_dir is None else str(base_dir))


def load_config(path) -> ScenarioConfig:
    """Read a TOML scenario file; relative paths inside resolve against its directory."""
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<syntax>", f"{path}: {exc}") from exc
    csv_path = data.get("channel", {}).get("temperature_csv") if isinstance(data.get("channel"), dict) else None
    if isinstance(csv_path, str) and csv_path and not Path(csv_path).is_absolute():
        data["channel"]["temperature_csv"] = str((path.parent / csv_path).resolve())
    return from_dict(data, base_dir=path.parent)


def _require(ok, key, message):
    if not ok:
        raise ConfigError(key, message)


def validate(cfg: ScenarioConfig):
    """Range checks; raises ConfigError naming the first bad key."""
    sc, so, ch, st, de, an = cfg.scenario, cfg.source, cfg.channel, cfg.stabilizer, cfg.detector, cfg.analysis
    _require(0 < sc.horizon_s <= 7 * 86400.0, "scenario.horizon_s", "must lie in (0, 604800] s")
    _require(sc.seed >= 0, "scenario.seed", "must be >= 0")
    _require(sc.link in ("field", "local"), "scenario.link", "must be 'field' or 'local'")
    _require(sc.acceleration >= 1, "scenario.acceleration", "must be >= 1")
    _require(sc.channel_step_s > 0, "scenario.channel_step_s", "must be > 0")
    _require(sc.event_log_format in ("csv", "binary"), "scenario.event_log_format", "must be 'csv' or 'binary'")
    _require(math.isclose(st.check_period_s / sc.channel_step_s, round(st.check_period_s / sc.channel_step_s)),
             "scenario.channel_step_s", "must divide stabilizer.check_period_s")

    _require(so.pair_rate_hz >= 0, "source.pair_rate_hz", "must be >= 0")
    _require(so.x_lifetime_ps > 0, "source.x_lifetime_ps", "must be > 0")
    _require(so.fss_energy_uev >= 0, "source.fss_energy_uev", "must be >= 0")
    _require(0 <= so.mixing_p <= 1, "source.mixing_p", "must lie in [0, 1]")
    _require(1260 <= so.xx_wavelength_nm <= 1360, "source.xx_wavelength_nm", "must lie in the O-band")
    _require(1260 <= so.x_wavelength_nm <= 1360, "source.x_wavelength_nm", "must lie in the O-band")

    for k in ("length_km", "fiber_loss_db", "component_loss_db", "drift_angle_rate_rad_per_sqrt_h",
              "diurnal_amplitude_rad", "wavelength_decorr_deg_per_nm"):
        _require(getattr(ch, k) >= 0, f"channel.{k}", "must be >= 0")
    for k in ("group_index", "diurnal_period_h", "wavelength_decorr_time_h"):
        _require(getattr(ch, k) > 0, f"channel.{k}", "must be > 0")

    for k in ("check_period_s", "check_duration_s", "forced_realign_period_s", "actuation_step_latency_s"):
        _require(getattr(st, k) > 0, f"stabilizer.{k}", "must be > 0")
    _require(st.check_duration_s < st.check_period_s, "stabilizer.check_duration_s", "must be < check_period_s")
    _require(0 < st.eta_threshold <= 1, "stabilizer.eta_threshold", "must lie in (0, 1]")
    _require(st.eta_threshold <= st.realign_target <= 1, "stabilizer.realign_target",
             "must lie in [eta_threshold, 1]")
    _require(st.max_steps > 0, "stabilizer.max_steps", "must be > 0")
    _require(st.meter_noise_rel >= 0, "stabilizer.meter_noise_rel", "must be >= 0")
    _require(1260 <= st.reference_wavelength_nm <= 1360, "stabilizer.reference_wavelength_nm",
             "must lie in the O-band")

    _require(de.jitter_fwhm_ps >= 0, "detector.jitter_fwhm_ps", "must be >= 0")
    _require(0 < de.efficiency <= 1, "detector.efficiency", "must lie in (0, 1]")
    _require(de.dark_rate_hz >= 0, "detector.dark_rate_hz", "must be >= 0")

    _require(an.block_s > 0, "analysis.block_s", "must be > 0")
    _require(an.switch_period_s > 0, "analysis.switch_period_s", "must be > 0")
    _require(0 <= an.guard_s < an.switch_period_s, "analysis.guard_s", "must lie in [0, switch_period_s)")
    _require(an.window_ps > 0, "analysis.window_ps", "must be > 0")
    _require(an.grid_ps > 0, "analysis.grid_ps", "must be > 0")
    _require(0 < an.sideband_lo_ps < an.sideband_hi_ps, "analysis.sideband_lo_ps",
             "need 0 < sideband_lo_ps < sideband_hi_ps")
    _require(an.halfwidth_ps >= an.sideband_hi_ps + 2000, "analysis.halfwidth_ps",
             "must exceed sideband_hi_ps by at least 2 ns")
    try:
        cfg.source_params(), cfg.schedule(), cfg.detector_params()
    except DomainError as exc:
        raise ConfigError("<params>", str(exc)) from exc

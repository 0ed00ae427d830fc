"""Simulation and analysis of a polarization-stabilized entanglement distribution link.

Modules
-------
polarization  Stokes/Jones calculus, two-photon states, fidelity and contrasts
source        quantum-dot cascade pair source with fine-structure splitting
channel       drifting deployed-fiber birefringence, time of flight and loss
stabilizer    two-reference lock, recovery optimizer, scheduling and duty cycle
coincidence   clicks, coincidence histograms, zero-delay fit, fidelity estimate
config, simulate, analysis, report, eventlog, cli   scenario harness
"""

from .errors import (
    ConfigError,
    DomainError,
    MeasurementError,
    MissingArtifactError,
    NoPeakError,
    SchemaError,
    UndefinedContrastError,
    UndefinedFidelityError,
)
from .polarization import (
    Basis,
    PolRotation,
    StokesVector,
    TwoPhotonState,
    apply_rotation_one_arm,
    fidelity_to_phi_plus,
    ideal_contrasts,
    projection_eta,
    rotation_about_axis,
)
from .source import SourceParams, calibrate_mixing_for_local_fidelity, emit_pairs, pair_state_at_delay
from .channel import ChannelParams, ChannelState, advance, birefringence_at, time_of_flight, transit
from .stabilizer import (
    ActuatorState,
    ReferencePair,
    StabilizerSchedule,
    calibrate_geometry,
    check_cycle,
    duty_cycle_report,
    generate_references,
    measure_projection,
    recover,
)
from .coincidence import (
    BasisSchedule,
    DetectionEvents,
    DetectorParams,
    basis_schedule,
    contrast,
    detect,
    fidelity_estimate,
    fit_zero_delay,
    histogram,
    track_time_of_flight,
)
from .config import ScenarioConfig, load_config
from .simulate import run_scenario
from .analysis import analyze
from .report import report

__version__ = "0.1.0"

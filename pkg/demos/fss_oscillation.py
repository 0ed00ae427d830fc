"""Fidelity against photon-pair delay for a few fine-structure splittings.

Runs an hour of the local benchmark per splitting, slides the 48 ps window
away from zero delay and fits the oscillation period.
"""

import numpy as np
from scipy import constants

from qdlink.analysis import fig2b_series
from qdlink.config import ScenarioConfig
from qdlink.report import fig2b_period
from qdlink.simulate import run_scenario

H_EV_S = constants.h / constants.e

for fss in (1.0, 2.0, 5.0):
    cfg = ScenarioConfig().replace(scenario={"link": "local", "horizon_s": 3600.0, "write_event_log": False},
                                   source={"fss_energy_uev": fss})
    res = run_scenario(cfg)
    delays, F, sigma, n = fig2b_series(res.analysis, cfg)
    period = fig2b_period(delays, F, sigma, n)
    expected = H_EV_S / (fss * 1e-6) * 1e12
    print(f"S = {fss:g} ueV: period {period:7.1f} ps, h/S {expected:7.1f} ps")

    # a coarse text plot of the first period
    for d, f in zip(delays[::4], F[::4]):
        if d > expected:
            break
        bar = "#" * int(round(40 * max(f, 0.0))) if np.isfinite(f) else ""
        print(f"  {d:6.0f} ps  {f:6.3f}  {bar}")
    print()

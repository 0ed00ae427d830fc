"""Twelve hours on the field link with and without the polarization lock.

Same seed, same fiber, same photons: the only difference is whether the
actuators are allowed to move.
"""

from qdlink.config import ScenarioConfig
from qdlink.simulate import run_scenario

base = ScenarioConfig().replace(scenario={"horizon_s": 12 * 3600.0, "write_event_log": False})
on = run_scenario(base)
off = run_scenario(base.replace(stabilizer={"enabled": False}))

print(" hour   F locked   F free")
for k, (a, b) in enumerate(zip(on.analysis.fidelities(), off.analysis.fidelities())):
    print(f"{k * 0.5:5.1f}   {a:8.3f}   {b:7.3f}")

d = on.summary["duty"]
print(f"\nmean F {on.summary['mean_F']:.3f} locked, {off.summary['mean_F']:.3f} free")
print(f"{d['n_recoveries']} recoveries, {d['n_realigns']} scheduled realignments, "
      f"overall duty {d['overall_duty']:.3f}")

"""Follow one monitored trajectory and print its click record.

With perfect detectors and no drive, each trajectory is a staircase: it sits
in |f> until the first D_e click, then in |e> until the D_g click, then in the
absorbing ground state.  Switching the drive on makes the f/e populations
oscillate between clicks.
"""
import numpy as np

from nhqubit import SystemParams, TrajectoryConfig, run_trajectory

params = SystemParams(gamma_e=0.2, gamma_g=4.0, omega=0.0)
config = TrajectoryConfig(dt=1e-3, t_final=10.0, n_traj=1, seed=7)

for omega in (0.0, 2.0):
    rec = run_trajectory(config, params.replace(omega=omega), traj_index=2)
    print(f"omega = {omega} MHz")
    for step_index, event in rec.clicks.events:
        print(f"  t = {rec.times[step_index + 1]:7.3f} us  {event.name}")
    if not rec.clicks.events:
        print("  no clicks before t_final")
    for t_probe in (0.3, 0.56, 0.6, 2.0):
        k = int(np.argmin(np.abs(rec.times - t_probe)))
        f, e, g = rec.populations[k]
        print(f"  t = {rec.times[k]:5.2f}  f={f:.3f} e={e:.3f} g={g:.3f}")

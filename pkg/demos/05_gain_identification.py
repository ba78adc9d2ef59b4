"""Identify PD controller gains from a recorded trajectory.

A simulated annealing search over (kp, kd) drives a double-integrator plant
until its end-effector path matches the recording; the loss per timestep is
position error plus half the geodesic rotation angle.
"""

import numpy as np

from policyarena.sysid import (
    AnnealConfig,
    GainBounds,
    PDGains,
    anneal_gains,
    reference_plant,
    trajectory_loss,
)

DT = 0.001  # keeps the integrator stable across the whole gain box

def plant(gains, commands):
    return reference_plant(gains, commands, dt=DT)

# "Recorded" trajectory: the plant run with gains we pretend not to know.
true_gains = PDGains(kp=8100.0, kd=650.0)
commands = np.zeros((60, 3))
commands[30:] = (0.1, -0.1, 0.05)  # a step to track
recorded = plant(true_gains, commands)

bounds = GainBounds(kp=(2000.0, 15000.0), kd=(10.0, 2000.0))
config = AnnealConfig(steps=3000, seed=0)
best, best_loss, trace = anneal_gains(plant, commands, recorded, bounds, config)

print(f"true gains   kp={true_gains.kp:.0f} kd={true_gains.kd:.0f}")
print(f"fitted gains kp={best.kp:.0f} kd={best.kd:.0f} (loss {best_loss:.3e})")

# The best-so-far trace is monotone: annealing may wander, the incumbent never worsens.
milestones = [0, 100, 500, 1000, 2000, len(trace) - 1]
print("best-so-far loss:", "  ".join(f"step {k}: {trace[k]:.2e}" for k in milestones))

# Compare against the midpoint guess to see how much the search bought us.
midpoint_loss = trajectory_loss(recorded, plant(bounds.midpoint(), commands))
print(f"midpoint guess loss {midpoint_loss:.3e} -> annealed {best_loss:.3e}")

"""
MPPI swing-up and what happens when samples run out
===================================================

The baseline controller is MPPI: score each perturbed plan by its rollout
cost, average the plans under softmax weights and apply the first action.
With 64 samples the cartpole swings up reliably; with two it rarely does.
"""

import numpy as np

from l2o_mpc.controller import MppiConfig, compute_weights, run_episode
from l2o_mpc.environments import CartpoleSpec

env = CartpoleSpec()
mppi = MppiConfig(horizon=30, num_samples=64, temperature=1.0, init_variance=(9.0,), halton_skip=511)

# the softmax weights only care about cost differences, and the temperature
# sets how sharply they concentrate on the best sample
costs = np.array([10.0, 11.0, 14.0])
for lam in (0.1, 1.0, 10.0):
    print(f"temperature {lam:5}: weights {np.round(compute_weights(costs, lam), 3)}")

ep = run_episode(env, mppi, seed=0, record=True)
print("64 samples: success", ep.success, " total cost", round(ep.total_cost, 1))
print("  final state", np.round(ep.states[-1], 3))
print("  effective sample size at t=0 and t=199:",
      round(ep.diagnostics[0]["ess"], 1), round(ep.diagnostics[-1]["ess"], 1))

# fewer samples: same scenarios, same bank prefix
for n in (64, 8, 4, 2):
    wins = sum(run_episode(env, mppi.replace(num_samples=n), seed=s).success for s in range(5))
    print(f"N={n:2d}: {wins}/5 episodes balanced")

"""
The gated learned update
========================

The learned optimiser sees the current plan, its variance and the costs of
only its first M bank samples. It outputs per-step gates and proposals and
mixes them with the old plan: a closed gate keeps the plan, an open gate
takes the proposal.
"""

import numpy as np

from l2o_mpc.controller import ControlDistribution
from l2o_mpc.network import CostNormalizer, Mlp, learned_update

H, d, M = 5, 1, 2
dist = ControlDistribution(np.linspace(-1, 1, H)[:, None], np.full((H, d), 0.5))
costs = np.array([3.0, 7.0])
normalizer = CostNormalizer(mean=5.0, std=2.0)

rng = np.random.default_rng(0)
mlp = Mlp.init([2 * H * d + M, 16, 16, 4 * H * d], rng)

# pin the proposal block to a known plan so the open gate is easy to read
proposal = np.array([2.0, 1.0, 0.0, -1.0, -2.0])
mlp.weights[-1][:, 2 * H * d : 3 * H * d] = 0.0
mlp.biases[-1][2 * H * d : 3 * H * d] = proposal

# force the gate logits to saturate and watch the two endpoints
for logit in (-40.0, 40.0):
    mlp.weights[-1][:, : H * d] = 0.0
    mlp.biases[-1][: H * d] = logit
    new = learned_update(dist, costs, mlp, normalizer)
    print(f"gate logit {logit:+}: new mean {np.round(new.mean[:, 0], 3)}")
print("old mean             ", np.round(dist.mean[:, 0], 3))
print("proposal             ", proposal)

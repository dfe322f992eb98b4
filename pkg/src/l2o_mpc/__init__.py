"""Sampling-based MPC with a learned, gated distribution update.

The baseline is MPPI over a fixed low-discrepancy perturbation bank; the
learned optimiser replaces its update with a small network that reads the
costs of only the first few bank samples and is trained by DAgger against a
many-sample MPPI expert.
"""

from .controller import (
    ControlDistribution,
    MppiConfig,
    MppiController,
    RolloutBatch,
    compute_weights,
    control_step,
    mppi_update,
    run_episode,
    shift,
)
from .dagger import DaggerConfig, DaggerDataset, NetworkConfig, bootstrap, dagger_train
from .environments import CartpoleSpec, PointmassSpec, ReacherSpec, make_env, reset, rollout, step
from .evaluation import BenchmarkConfig, grid_search_tune, run_benchmark
from .network import LearnedOptimizer, learned_update
from .sampling import HaltonConfig, build_sample_bank, halton_points, radical_inverse

__all__ = [
    "BenchmarkConfig",
    "CartpoleSpec",
    "ControlDistribution",
    "DaggerConfig",
    "DaggerDataset",
    "HaltonConfig",
    "LearnedOptimizer",
    "MppiConfig",
    "MppiController",
    "NetworkConfig",
    "PointmassSpec",
    "ReacherSpec",
    "RolloutBatch",
    "bootstrap",
    "build_sample_bank",
    "compute_weights",
    "control_step",
    "dagger_train",
    "grid_search_tune",
    "halton_points",
    "learned_update",
    "make_env",
    "mppi_update",
    "radical_inverse",
    "reset",
    "rollout",
    "run_benchmark",
    "run_episode",
    "shift",
    "step",
]

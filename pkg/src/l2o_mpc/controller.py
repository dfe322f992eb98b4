"""MPPI written as a dynamic-mirror-descent step on a factorised Gaussian.

The controller keeps a per-step Gaussian over controls, perturbs it with a
fixed :class:`~l2o_mpc.sampling.SampleBank`, scores the perturbed sequences
on a model, and moves the mean toward the softmax-weighted samples. The
update rule is pluggable so a learned optimiser can replace it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from .environments import EnvSpec, Episode, reset, rollout_costs, step
from .sampling import SampleBank, build_sample_bank

Array = NDArray[np.float64]
VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class ControlDistribution:
    mean: Array  # (H, control_dim)
    var_diag: Array  # (H, control_dim)

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        var = np.array(self.var_diag, dtype=float)
        if mean.ndim != 2 or mean.shape != var.shape:
            raise ValueError(f"mean {mean.shape} and var_diag {var.shape} must be matching (H, d)")
        if not np.all(var > 0):
            raise ValueError("all variances must be positive")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var_diag", var)

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def control_dim(self) -> int:
        return self.mean.shape[1]

    @classmethod
    def initial(cls, horizon: int, init_variance) -> ControlDistribution:
        var = np.broadcast_to(np.asarray(init_variance, dtype=float), (horizon, len(np.atleast_1d(init_variance))))
        return cls(np.zeros(var.shape), var)


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 40
    num_samples: int = 64
    temperature: float = 1.0
    step_size_mean: float = 1.0
    step_size_cov: float = 0.0
    adapt_covariance: bool = False
    init_variance: tuple[float, ...] = (1.0,)
    use_mean_action: bool = True
    shift_fill: str = "repeat_last"
    halton_skip: int = 0

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.step_size_mean <= 1:
            raise ValueError("step_size_mean must lie in (0, 1]")
        if not 0 <= self.step_size_cov <= 1:
            raise ValueError("step_size_cov must lie in [0, 1]")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.horizon < 4:
            raise ValueError("horizon must be >= 4 for cubic B-spline smoothing")
        if self.shift_fill not in ("repeat_last", "zero"):
            raise ValueError(f"unknown shift_fill {self.shift_fill!r}")
        if self.halton_skip < 0:
            raise ValueError("halton_skip must be >= 0")
        init = tuple(float(v) for v in np.atleast_1d(self.init_variance))
        if not all(v > 0 for v in init):
            raise ValueError("init_variance entries must be positive")
        object.__setattr__(self, "init_variance", init)

    def replace(self, **changes) -> MppiConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class RolloutBatch:
    controls: Array  # (N, H, control_dim)
    costs: Array  # (N,)
    weights: Optional[Array] = None

    def prefix(self, m: int) -> RolloutBatch:
        return RolloutBatch(self.controls[:m], self.costs[:m])


UpdateFn = Callable[[ControlDistribution, RolloutBatch], ControlDistribution]


def sample_controls(dist: ControlDistribution, bank: SampleBank, u_min, u_max) -> Array:
    """Affine-map the bank through the distribution and clamp to the control box."""
    pert = bank.perturbations
    if pert.shape[1:] != dist.mean.shape:
        raise ValueError(f"bank samples {pert.shape[1:]} do not match distribution {dist.mean.shape}")
    u = dist.mean + np.sqrt(dist.var_diag) * pert
    return np.clip(u, u_min, u_max)


def compute_weights(costs, temperature: float) -> Array:
    costs = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    e = np.exp(-(costs - costs.min()) / temperature)
    return e / e.sum()


def mppi_update(dist: ControlDistribution, batch: RolloutBatch, config: MppiConfig) -> ControlDistribution:
    if batch.weights is None:
        raise ValueError("batch weights have not been computed")
    w = batch.weights
    u = batch.controls
    if u.shape[1:] != dist.mean.shape or w.shape[0] != u.shape[0]:
        raise ValueError("batch shape does not match distribution")
    g = config.step_size_mean
    mean = (1.0 - g) * dist.mean + g * np.tensordot(w, u, axes=1)
    var = dist.var_diag
    if config.adapt_covariance:
        dev = u - dist.mean
        gs = config.step_size_cov
        var = np.maximum((1.0 - gs) * var + gs * np.tensordot(w, dev * dev, axes=1), VAR_FLOOR)
    return ControlDistribution(mean, var)


def shift(dist: ControlDistribution, config: MppiConfig) -> ControlDistribution:
    """Warm start: drop the first step and append a fill step at the end."""
    mean = np.empty_like(dist.mean)
    mean[:-1] = dist.mean[1:]
    mean[-1] = dist.mean[-1] if config.shift_fill == "repeat_last" else 0.0
    var = np.empty_like(dist.var_diag)
    var[:-1] = dist.var_diag[1:]
    var[-1] = np.asarray(config.init_variance)
    return ControlDistribution(mean, var)


def exponential_utility(costs, temperature: float) -> float:
    """``-lambda * log mean exp(-C / lambda)``, in cost units."""
    costs = np.asarray(costs, dtype=float)
    c0 = costs.min()
    return float(c0 - temperature * np.log(np.mean(np.exp(-(costs - c0) / temperature))))


def likelihood_ratio_grad_mean(dist: ControlDistribution, batch: RolloutBatch) -> Array:
    """Sample estimate of the mean gradient of the exponential-utility loss."""
    if batch.weights is None:
        raise ValueError("batch weights have not been computed")
    dev = batch.controls - dist.mean
    return -np.tensordot(batch.weights, dev, axes=1) / dist.var_diag


def effective_sample_size(weights) -> float:
    return float(1.0 / np.sum(np.asarray(weights) ** 2))


def weight_entropy(weights) -> float:
    w = np.asarray(weights)
    w = w[w > 0]
    return float(-np.sum(w * np.log(w)))


class MppiController:
    """Single-owner MPC state: a distribution, a sample bank and a model.

    ``update_fn`` defaults to the MPPI rule; pass a learned update to swap it.
    """

    def __init__(
        self,
        config: MppiConfig,
        model: EnvSpec,
        bank: SampleBank | None = None,
        update_fn: UpdateFn | None = None,
    ) -> None:
        if len(config.init_variance) not in (1, model.control_dim):
            raise ValueError("init_variance must have one entry or one per control dim")
        init_var = np.broadcast_to(config.init_variance, (model.control_dim,))
        self.config = config.replace(init_variance=tuple(init_var))
        self.model = model
        if bank is None:
            bank = build_sample_bank(config.num_samples, config.horizon, model.control_dim, config.halton_skip)
        if bank.perturbations.shape != (config.num_samples, config.horizon, model.control_dim):
            raise ValueError("sample bank shape does not match controller config")
        self.bank = bank
        self.update_fn = update_fn or self.mppi
        self.reset()

    def mppi(self, dist: ControlDistribution, batch: RolloutBatch) -> ControlDistribution:
        return mppi_update(dist, batch, self.config)

    def reset(self) -> None:
        self.dist = ControlDistribution.initial(self.config.horizon, self.config.init_variance)

    def evaluate(self, dist: ControlDistribution, state) -> RolloutBatch:
        u = sample_controls(dist, self.bank, self.model.u_min, self.model.u_max)
        costs = rollout_costs(self.model, state, u)
        return RolloutBatch(u, costs, compute_weights(costs, self.config.temperature))

    def shift(self, dist: ControlDistribution | None = None) -> ControlDistribution:
        self.dist = shift(self.dist if dist is None else dist, self.config)
        return self.dist


def control_step(
    controller: MppiController,
    state,
    update_fn: UpdateFn | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Array, ControlDistribution, RolloutBatch]:
    """One MPC iteration from the controller's current (shifted) distribution.

    Returns the control to apply, the updated distribution and the scored
    batch. The caller applies the control and then calls ``controller.shift``.
    """
    update_fn = update_fn or controller.update_fn
    batch = controller.evaluate(controller.dist, state)
    new = update_fn(controller.dist, batch)
    if controller.config.use_mean_action or rng is None:
        u = new.mean[0].copy()
    else:
        u = new.mean[0] + np.sqrt(new.var_diag[0]) * rng.standard_normal(new.mean.shape[1])
    controller.dist = new
    return controller.model.clamp(u), new, batch


def diagnostics_record(t: int, batch: RolloutBatch, temperature: float) -> dict:
    return {
        "step": t,
        "objective": exponential_utility(batch.costs, temperature),
        "min_cost": float(batch.costs.min()),
        "mean_cost": float(batch.costs.mean()),
        "ess": effective_sample_size(batch.weights),
        "weight_entropy": weight_entropy(batch.weights),
    }


def run_episode(
    env: EnvSpec,
    config: MppiConfig,
    seed: int,
    bank: SampleBank | None = None,
    update_fn: UpdateFn | None = None,
    model_overrides: dict | None = None,
    record: bool = False,
) -> Episode:
    """Closed-loop episode on the plant ``env`` from the scenario ``seed``.

    The controller plans on a copy of the episode spec, optionally with
    physical parameters replaced by ``model_overrides`` (model mismatch).
    """
    state, episode_env = reset(env, seed)
    model = dataclasses.replace(episode_env, **model_overrides) if model_overrides else episode_env
    ctrl = MppiController(config, model, bank, update_fn)
    rng = np.random.default_rng([seed, 1])
    states = [state]
    controls, costs, diags = [], [], []
    for t in range(episode_env.episode_length):
        u, _, batch = control_step(ctrl, state, rng=rng)
        costs.append(float(episode_env.running_cost(state, u)))
        if record:
            diags.append(diagnostics_record(t, batch, config.temperature))
        state = step(episode_env, state, u)
        states.append(state)
        controls.append(u)
        ctrl.shift()
    return Episode(episode_env, seed, np.array(states), np.array(controls), np.array(costs), diags)

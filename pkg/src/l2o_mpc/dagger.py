"""DAgger training of the learned optimiser against a many-sample MPPI expert.

Expert and learner share one Halton bank: the expert scores all ``N``
samples, the learner only sees the costs of the first ``M``. Every step
records the warm-started distribution, the learner-visible costs and the
expert's updated distribution, whichever of the two is actually applied.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .controller import (
    ControlDistribution,
    MppiConfig,
    MppiController,
    mppi_update,
    shift,
)
from .environments import EnvSpec, reset, step
from .network import (
    AdamState,
    LearnedOptimizer,
    adam_step,
    fit_normalizer,
    loss_and_grads,
)
from .sampling import SampleBank, build_sample_bank

log = logging.getLogger(__name__)

DATASET_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    hidden: int = 256
    dropout_prob: float = 0.1
    learning_rate: float = 1e-3

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class DaggerConfig:
    iterations: int = 10
    rollouts_per_iter: int = 32
    mixing_base: float = 0.8
    expert_samples: int = 64
    learner_samples: int = 4
    bootstrap_episodes: int = 64
    epochs_per_iter: int = 20
    batch_size: int = 64
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.learner_samples <= self.expert_samples:
            raise ValueError("need 1 <= learner_samples <= expert_samples")
        if self.iterations < 1 or self.rollouts_per_iter < 1:
            raise ValueError("iterations and rollouts_per_iter must be >= 1")
        if not 0 < self.mixing_base < 1:
            raise ValueError("mixing_base must lie in (0, 1)")
        if not 0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5]")
        if self.bootstrap_episodes < 0 or self.epochs_per_iter < 1 or self.batch_size < 1:
            raise ValueError("bootstrap_episodes >= 0, epochs_per_iter >= 1, batch_size >= 1 required")


def mixing_prob(k: int, p: float) -> float:
    """Probability of applying the expert at DAgger iteration ``k >= 1``."""
    if k < 1:
        raise ValueError("iteration index starts at 1")
    if not 0 < p < 1:
        raise ValueError("mixing base must lie in (0, 1)")
    return p**k


@dataclass
class DaggerRecord:
    env: str
    episode: int
    step: int
    state: np.ndarray
    mean: np.ndarray
    var_diag: np.ndarray
    costs: np.ndarray
    expert_mean: np.ndarray
    expert_var_diag: np.ndarray

    def to_json(self) -> dict:
        return {
            "env": self.env,
            "episode": self.episode,
            "step": self.step,
            "state": self.state.tolist(),
            "mean": self.mean.tolist(),
            "var_diag": self.var_diag.tolist(),
            "costs": self.costs.tolist(),
            "expert_mean": self.expert_mean.tolist(),
            "expert_var_diag": self.expert_var_diag.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> DaggerRecord:
        arr = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(d["env"], int(d["episode"]), int(d["step"]), arr("state"), arr("mean"),
                   arr("var_diag"), arr("costs"), arr("expert_mean"), arr("expert_var_diag"))


@dataclass
class DaggerDataset:
    """Append-only record store with an episode-level train/validation split."""

    records: list[DaggerRecord] = field(default_factory=list)
    validation_fraction: float = 0.1
    seed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def extend(self, records: Iterable[DaggerRecord]) -> None:
        self.records.extend(records)

    def is_validation(self, episode: int) -> bool:
        return bool(np.random.default_rng([self.seed, episode, 7]).random() < self.validation_fraction)

    def split(self) -> tuple[list[DaggerRecord], list[DaggerRecord]]:
        episodes = self.episodes
        held = {e for e in episodes if self.is_validation(e)}
        if episodes and len(held) == len(episodes):
            held.discard(episodes[0])  # never leave the training split empty
        train, val = [], []
        for r in self.records:
            (val if r.episode in held else train).append(r)
        return train, val

    @property
    def episodes(self) -> list[int]:
        return sorted({r.episode for r in self.records})

    def save(self, path, header: dict | None = None) -> None:
        head = {"format_version": DATASET_VERSION, "seed": self.seed,
                "validation_fraction": self.validation_fraction, **(header or {})}
        with open(path, "w") as fh:
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> tuple[DaggerDataset, dict]:
        """Read a dataset file; malformed or truncated lines raise ``ValueError``."""
        with open(path) as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        else:
            raise ValueError(f"{path}: file does not end with a newline (truncated?)")
        try:
            head = json.loads(lines[0])
        except (IndexError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: unreadable header") from exc
        if head.get("format_version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {head.get('format_version')!r}")
        records = []
        for n, line in enumerate(lines[1:], start=2):
            try:
                records.append(DaggerRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: malformed record") from exc
        return cls(records, head["validation_fraction"], head["seed"]), head


def stack_records(records: Sequence[DaggerRecord]) -> dict[str, np.ndarray]:
    return {k: np.stack([getattr(r, k) for r in records]) for k in
            ("mean", "var_diag", "costs", "expert_mean", "expert_var_diag")}


# ---------------------------------------------------------------------------
# data collection


@dataclass
class RolloutResult:
    records: list[DaggerRecord]
    states: np.ndarray
    controls: np.ndarray
    expert_steps: int
    env: EnvSpec

    @property
    def success(self) -> bool:
        return self.env.success(self.states)


def dagger_rollout(
    env: EnvSpec,
    scenario_seed: int,
    mppi: MppiConfig,
    bank: SampleBank,
    learner: Optional[LearnedOptimizer],
    beta: float,
    rng: np.random.Generator,
    learner_samples: int,
    episode: int = 0,
) -> RolloutResult:
    """One mixed expert/learner episode.

    Per step the expert update is always computed from all bank samples; a
    uniform draw ``b <= beta`` applies it, otherwise the learner's update from
    the first ``learner_samples`` costs is applied.
    """
    state, ep_env = reset(env, scenario_seed)
    ctrl = MppiController(mppi, ep_env, bank)
    dist = ctrl.dist
    records, states, controls = [], [state], []
    n_expert = 0
    for t in range(ep_env.episode_length):
        batch = ctrl.evaluate(dist, state)
        expert = mppi_update(dist, batch, ctrl.config)
        b = rng.random()
        if b <= beta or learner is None:
            new = expert
            n_expert += 1
        else:
            new = learner(dist, batch.prefix(learner_samples))
        records.append(DaggerRecord(
            ep_env.name, episode, t, state.copy(), dist.mean, dist.var_diag,
            batch.costs[:learner_samples].copy(), expert.mean, expert.var_diag,
        ))
        u = ep_env.clamp(new.mean[0])
        state = step(ep_env, state, u)
        states.append(state)
        controls.append(u)
        dist = shift(new, ctrl.config)
    return RolloutResult(records, np.array(states), np.array(controls), n_expert, ep_env)


def _episode_seeds(seed: int, phase: int, index: int) -> tuple[int, np.random.Generator]:
    ss = np.random.SeedSequence([seed, phase, index])
    scenario_seed = int(ss.generate_state(1)[0])
    return scenario_seed, np.random.default_rng(ss.spawn(1)[0])


def _run_rollouts(env, mppi, bank, learner, beta, cfg: DaggerConfig, phase: int, count: int,
                  first_episode: int, threads: int = 1) -> list[RolloutResult]:
    jobs = []
    for r in range(count):
        scenario_seed, rng = _episode_seeds(cfg.seed, phase, r)
        jobs.append((env, scenario_seed, mppi, bank, learner, beta, rng, cfg.learner_samples, first_episode + r))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as pool:
            return list(pool.map(_rollout_job, jobs))
    return [_rollout_job(j) for j in jobs]


def _rollout_job(args) -> RolloutResult:
    return dagger_rollout(*args)


def expert_config(mppi: MppiConfig, cfg: DaggerConfig) -> MppiConfig:
    return mppi.replace(num_samples=cfg.expert_samples)


def bootstrap(env: EnvSpec, mppi: MppiConfig, cfg: DaggerConfig, episodes: int | None = None,
              threads: int = 1) -> DaggerDataset:
    """Expert-only episodes, one record per control step."""
    episodes = cfg.bootstrap_episodes if episodes is None else episodes
    mppi = expert_config(mppi, cfg)
    bank = build_sample_bank(mppi.num_samples, mppi.horizon, env.control_dim, mppi.halton_skip)
    data = DaggerDataset(validation_fraction=cfg.validation_fraction, seed=cfg.seed)
    for res in _run_rollouts(env, mppi, bank, None, 1.0, cfg, 0, episodes, 0, threads):
        data.extend(res.records)
    return data


def replay_verify(env: EnvSpec, mppi: MppiConfig, records: Iterable[DaggerRecord],
                  episode_envs: dict[int, EnvSpec] | None = None) -> float:
    """Recompute expert targets from stored states; returns the largest deviation.

    Raises ``AssertionError`` if the stored learner costs are not exactly the
    first ``M`` recomputed costs. ``episode_envs`` maps episode ids to their
    concrete scenario specs (needed when goals or obstacles are randomised).
    """
    bank = build_sample_bank(mppi.num_samples, mppi.horizon, env.control_dim, mppi.halton_skip)
    worst = 0.0
    for r in records:
        model = (episode_envs or {}).get(r.episode, env)
        ctrl = MppiController(mppi, model, bank)
        dist = ControlDistribution(r.mean, r.var_diag)
        batch = ctrl.evaluate(dist, r.state)
        m = len(r.costs)
        if not np.array_equal(batch.costs[:m], r.costs):
            raise AssertionError(f"episode {r.episode} step {r.step}: learner costs are not the bank prefix")
        expert = mppi_update(dist, batch, ctrl.config)
        worst = max(worst, float(np.max(np.abs(expert.mean - r.expert_mean))),
                    float(np.max(np.abs(expert.var_diag - r.expert_var_diag))))
    return worst


# ---------------------------------------------------------------------------
# training


def evaluate_loss(opt: LearnedOptimizer, arrays: dict[str, np.ndarray], chunk: int = 4096) -> float:
    n = arrays["mean"].shape[0]
    if n == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, n, chunk):
        sl = slice(lo, lo + chunk)
        x = opt.encode(arrays["mean"][sl], arrays["var_diag"][sl], arrays["costs"][sl])
        loss, _ = _loss(opt, x, arrays, sl, None, need_grads=False)
        total += loss * (min(n, lo + chunk) - lo)
    return total / n


def _loss(opt, x, arrays, sl, dropout_seed, need_grads=True):
    return loss_and_grads(
        opt.mlp, x, arrays["mean"][sl], arrays["var_diag"][sl], arrays["expert_mean"][sl],
        arrays["expert_var_diag"][sl], opt.adapt_covariance, dropout_seed,
    ) if need_grads else _forward_loss(opt, x, arrays, sl)


def _forward_loss(opt, x, arrays, sl):
    from .network import apply_gates, forward, split_head

    head = split_head(forward(opt.mlp, x), opt.horizon, opt.control_dim)
    new_mean, new_var = apply_gates(arrays["mean"][sl], arrays["var_diag"][sl], head, opt.adapt_covariance)
    loss = float(np.mean((new_mean - arrays["expert_mean"][sl]) ** 2))
    if opt.adapt_covariance:
        loss += float(np.mean((new_var - arrays["expert_var_diag"][sl]) ** 2))
    return loss, None


def train_epochs(opt: LearnedOptimizer, train: dict[str, np.ndarray], val: dict[str, np.ndarray],
                 epochs: int, batch_size: int, lr: float, rng: np.random.Generator) -> dict:
    """Minibatch Adam; keeps the parameters with the lowest validation loss.

    ``opt`` ends up holding the best parameters. Returns loss curves.
    """
    n = train["mean"].shape[0]
    x_all = opt.encode(train["mean"], train["var_diag"], train["costs"])
    adam = AdamState.zeros_like(opt.mlp.params, lr)
    best_val, best_params = evaluate_loss(opt, val), opt.mlp.copy()
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        seeds = rng.integers(0, 2**63, size=(n + batch_size - 1) // batch_size)
        total = 0.0
        for b, lo in enumerate(range(0, n, batch_size)):
            idx = order[lo : lo + batch_size]
            loss, grads = _loss(opt, x_all[idx], train, idx, int(seeds[b]))
            adam_step(opt.mlp.params, grads, adam)
            total += loss * len(idx)
        val_loss = evaluate_loss(opt, val)
        curve.append({"epoch": epoch, "train_loss": total / max(n, 1), "val_loss": val_loss})
        if not val_loss > best_val:  # also handles an empty validation split (nan)
            best_val, best_params = val_loss, opt.mlp.copy()
    opt.mlp = best_params
    return {"best_val": best_val, "curve": curve, "last_val": curve[-1]["val_loss"] if curve else best_val}


def dagger_train(
    env: EnvSpec,
    mppi: MppiConfig,
    cfg: DaggerConfig,
    net: NetworkConfig = NetworkConfig(),
    dataset: DaggerDataset | None = None,
    threads: int = 1,
    callback=None,
) -> tuple[LearnedOptimizer, list[dict], DaggerDataset]:
    """Bootstrap (unless a dataset is given), then ``K`` DAgger iterations.

    The cost normaliser is fit once on the bootstrap data and frozen. Each
    iteration trains from the previous best network and keeps the best
    validation epoch; the returned network is the iteration-best with the
    lowest loss on the final validation split.
    """
    mppi = expert_config(mppi, cfg)
    bank = build_sample_bank(mppi.num_samples, mppi.horizon, env.control_dim, mppi.halton_skip)
    if dataset is None:
        dataset = bootstrap(env, mppi, cfg, threads=threads)
    if len(dataset) == 0:
        raise ValueError("DAgger needs a non-empty bootstrap dataset")
    rng = np.random.default_rng([cfg.seed, 99])
    train, _ = dataset.split()
    normalizer = fit_normalizer(np.concatenate([r.costs for r in (train or dataset.records)]))
    learner = LearnedOptimizer.create(mppi.horizon, env.control_dim, cfg.learner_samples, net.hidden,
                                      rng, net.dropout_prob, mppi.adapt_covariance, normalizer)
    learner.meta = {"env": env.name, "expert_samples": cfg.expert_samples, "seed": cfg.seed}

    history: list[dict] = []
    candidates: list = []

    def fit(iteration: int, beta: float, expert_steps: int, steps: int, successes: int, rollouts: int):
        tr, va = dataset.split()
        stats = train_epochs(learner, stack_records(tr), stack_records(va) if va else _empty(learner),
                             cfg.epochs_per_iter, cfg.batch_size, net.learning_rate, rng)
        candidates.append(learner.mlp.copy())
        row = {
            "iteration": iteration,
            "beta": beta,
            "dataset_size": len(dataset),
            "train_loss": stats["curve"][-1]["train_loss"],
            "val_loss": stats["best_val"],
            "last_epoch_val_loss": stats["last_val"],
            "expert_fraction": expert_steps / steps if steps else 1.0,
            "rollout_success_rate": 100.0 * successes / rollouts if rollouts else float("nan"),
        }
        if iteration > 0:
            history.append(row)
        log.info("dagger iteration %d: %s", iteration, row)
        if callback:
            callback(row)

    # fit on the bootstrap data before the first mixed rollouts
    fit(0, 1.0, 0, 0, 0, 0)
    next_episode = max(dataset.episodes) + 1
    for k in range(1, cfg.iterations + 1):
        beta = mixing_prob(k, cfg.mixing_base)
        try:
            results = _run_rollouts(env, mppi, bank, learner, beta, cfg, k, cfg.rollouts_per_iter,
                                    next_episode, threads)
        except Exception as exc:
            raise RuntimeError(f"DAgger rollout failed in iteration {k}") from exc
        next_episode += cfg.rollouts_per_iter
        before = len(dataset)
        for res in results:
            dataset.extend(res.records)
        assert len(dataset) == before + sum(len(r.records) for r in results)
        steps = sum(len(r.records) for r in results)
        fit(k, beta, sum(r.expert_steps for r in results), steps,
            sum(r.success for r in results), len(results))

    _, va = dataset.split()
    if va:
        val = stack_records(va)
        scores = []
        for params in candidates:
            learner.mlp = params
            scores.append(evaluate_loss(learner, val))
        learner.mlp = candidates[int(np.argmin(scores))]
    return learner, history, dataset


def _empty(opt: LearnedOptimizer) -> dict[str, np.ndarray]:
    h, d, m = opt.horizon, opt.control_dim, opt.num_samples
    z = np.zeros((0, h, d))
    return {"mean": z, "var_diag": z, "costs": np.zeros((0, m)), "expert_mean": z, "expert_var_diag": z}


def config_dict(cfg) -> dict:
    return asdict(cfg)

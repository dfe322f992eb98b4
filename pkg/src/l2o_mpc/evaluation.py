"""Fixed-seed benchmark harness: success rates, path length and jerk.

Every cell (controller, sample count) replays the same sequence of episode
seeds, so episode ``e`` sees the same start state, goal and obstacles in all
cells. Relative statistics are ratios of means against the baseline cell
with the same sample count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import MppiConfig, run_episode
from .environments import EnvSpec, Episode, reset
from .network import LearnedOptimizer
from .sampling import build_sample_bank

METRICS_VERSION = 1
LOG_VERSION = 1
CSV_FIELDS = ["env", "controller", "num_samples", "episodes", "success_rate", "mean_cost",
              "relative_length", "relative_jerk"]
BASELINE = "mppi"
LEARNED = "learned"
TUNED_KEYS = ("temperature", "step_size_mean", "init_variance")


def success_rate(episodes: Sequence[Episode]) -> float:
    """Percentage of successful episodes, rounded to two decimals."""
    if len(episodes) == 0:
        raise ValueError("success rate of an empty episode list")
    wins = sum(1 for ep in episodes if ep.success)
    return round(100.0 * wins / len(episodes), 2)


def trajectory_length(episode: Episode) -> float:
    """Summed step length of the task-space position."""
    pos = episode.spec.task_position(episode.states)
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=-1)))


def average_jerk(episode: Episode) -> float:
    """Mean norm of the third central difference of task-space position, over dt^3."""
    pos = np.asarray(episode.spec.task_position(episode.states), dtype=float)
    if pos.shape[0] < 4:
        raise ValueError(f"jerk needs at least 4 positions, got {pos.shape[0]}")
    # third difference centred between samples; exact on cubics
    third = pos[3:] - 3 * pos[2:-1] + 3 * pos[1:-2] - pos[:-3]
    return float(np.mean(np.linalg.norm(third, axis=-1)) / episode.spec.dt**3)


def scenario_key(start, episode_env: EnvSpec) -> str:
    """Hash of what an episode seed fixes: start state, goal, obstacles."""
    blob = json.dumps({"start": np.asarray(start).tolist(), "scenario": episode_env.scenario()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def episode_seeds(test_seed: int, count: int) -> list[int]:
    """Scenario seeds of a test (or tuning) suite."""
    return [int(np.random.SeedSequence([test_seed, e]).generate_state(1)[0]) for e in range(count)]


@dataclass
class MetricsRow:
    env: str
    controller: str
    num_samples: int
    episodes: int
    success_rate: float
    mean_cost: float
    relative_length: float | None = None
    relative_jerk: float | None = None

    def csv_row(self) -> list:
        def opt(x):
            return "" if x is None else repr(float(x))

        return [self.env, self.controller, self.num_samples, self.episodes, repr(self.success_rate),
                repr(self.mean_cost), opt(self.relative_length), opt(self.relative_jerk)]


def tuned_config(mppi: MppiConfig, num_samples: int, params: dict, control_dim: int) -> MppiConfig:
    """``mppi`` at ``num_samples`` with tuned hyperparameters substituted."""
    unknown = set(params) - set(TUNED_KEYS)
    if unknown:
        raise ValueError(f"unknown tuned hyperparameters {sorted(unknown)}")
    params = dict(params)
    if "init_variance" in params:
        params["init_variance"] = _as_variance(params["init_variance"], control_dim)
    return mppi.replace(num_samples=num_samples, **params)


@dataclass
class BenchmarkConfig:
    """``baseline`` maps sample count to tuned ``{temperature, step_size_mean,
    init_variance}``; ``learned`` maps sample count to a checkpoint."""

    env: EnvSpec
    mppi: MppiConfig
    sample_counts: tuple[int, ...]
    baseline: dict[int, dict]
    learned: dict[int, LearnedOptimizer] = field(default_factory=dict)
    learned_mppi: MppiConfig | None = None
    episodes_per_cell: int = 30
    test_seed: int = 0
    record_diagnostics: bool = True

    def __post_init__(self) -> None:
        if self.episodes_per_cell < 1:
            raise ValueError("episodes_per_cell must be >= 1")
        missing = [n for n in self.sample_counts if n not in self.baseline]
        if missing:
            raise ValueError(f"no tuned baseline hyperparameters for sample counts {missing}")
        for n, opt in self.learned.items():
            if opt.num_samples != n:
                raise ValueError(f"checkpoint for {n} samples was trained for {opt.num_samples}")
            if (opt.horizon, opt.control_dim) != (self.mppi.horizon, self.env.control_dim):
                raise ValueError("checkpoint horizon/control_dim do not match the benchmark")

    def baseline_config(self, n: int) -> MppiConfig:
        return tuned_config(self.mppi, n, self.baseline[n], self.env.control_dim)

    def learned_config(self, n: int) -> MppiConfig:
        return (self.learned_mppi or self.mppi).replace(num_samples=n)


@dataclass
class BenchmarkResult:
    rows: list[MetricsRow]
    episodes: list[dict]
    positions: list[dict]

    def row(self, controller: str, n: int) -> MetricsRow:
        return next(r for r in self.rows if r.controller == controller and r.num_samples == n)


def _episode_job(args) -> tuple[Episode, float, float | None]:
    env, cfg, seed, update_fn, record = args
    bank = build_sample_bank(cfg.num_samples, cfg.horizon, env.control_dim, cfg.halton_skip)
    ep = run_episode(env, cfg, seed, bank=bank, update_fn=update_fn, record=record)
    jerk = average_jerk(ep) if ep.success else None
    return ep, trajectory_length(ep), jerk


def _map(fn, jobs: list, threads: int) -> list:
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(min(threads, len(jobs))) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _ratio(num: list[float], den: list[float]) -> float | None:
    if not num or not den:
        return None
    d = float(np.mean(den))
    if d == 0.0 or not math.isfinite(d):
        return None
    return float(np.mean(num)) / d


def run_benchmark(config: BenchmarkConfig, threads: int = 1) -> BenchmarkResult:
    """Run every (controller, sample count) cell on the shared test suite."""
    env = config.env
    seeds = episode_seeds(config.test_seed, config.episodes_per_cell)
    keys = [scenario_key(*reset(env, s)) for s in seeds]
    cells = [(BASELINE, n) for n in config.sample_counts]
    cells += [(LEARNED, n) for n in config.sample_counts if n in config.learned]

    jobs, owners = [], []
    for controller, n in cells:
        if controller == BASELINE:
            cfg, fn = config.baseline_config(n), None
        else:
            cfg, fn = config.learned_config(n), config.learned[n]
        for e, s in enumerate(seeds):
            jobs.append((env, cfg, s, fn, config.record_diagnostics))
            owners.append((controller, n, e))
    outputs = _map(_episode_job, jobs, threads)

    by_cell: dict[tuple[str, int], list] = {c: [] for c in cells}
    log, positions = [], []
    for (controller, n, e), (ep, length, jerk) in zip(owners, outputs):
        # scenario parity across cells
        if scenario_key(ep.states[0], ep.spec) != keys[e]:
            raise AssertionError(f"episode {e} of cell {controller}/{n} saw a different scenario")
        by_cell[(controller, n)].append((ep, length, jerk))
        log.append({
            "controller": controller, "num_samples": n, "episode": e, "seed": ep.seed,
            "scenario": keys[e], "success": ep.success, "total_cost": ep.total_cost,
            "length": length, "jerk": jerk, "final_state": ep.states[-1].tolist(),
            "steps": ep.diagnostics,
        })
        positions.append({
            "controller": controller, "num_samples": n, "episode": e,
            "dt": env.dt, "positions": env.task_position(ep.states).tolist(),
        })

    rows = []
    for controller, n in cells:
        runs = by_cell[(controller, n)]
        base = by_cell[(BASELINE, n)]
        eps = [r[0] for r in runs]
        rows.append(MetricsRow(
            env=env.name,
            controller=controller,
            num_samples=n,
            episodes=len(eps),
            success_rate=success_rate(eps),
            mean_cost=float(np.mean([ep.total_cost for ep in eps])),
            relative_length=_ratio([r[1] for r in runs], [r[1] for r in base]),
            relative_jerk=_ratio([r[2] for r in runs if r[2] is not None],
                                 [r[2] for r in base if r[2] is not None]),
        ))
    return BenchmarkResult(rows, log, positions)


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version={METRICS_VERSION}; relative_length and relative_jerk are ratios of means "
              "against the mppi row with the same num_samples; jerk uses successful episodes only\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow(row.csv_row())
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# format_version={METRICS_VERSION};"):
        raise ValueError(f"{path}: missing or unsupported metrics format version")
    return list(csv.DictReader(lines[1:]))


def _jsonl(header: dict, records: list[dict]) -> str:
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True) for r in records]
    return "\n".join(lines) + "\n"


def write_benchmark(result: BenchmarkResult, out_dir, header: dict | None = None) -> dict[str, Path]:
    """Write ``metrics.csv``, ``episodes.jsonl`` and ``positions.jsonl`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(header or {})
    paths = {
        "metrics": out / "metrics.csv",
        "episodes": out / "episodes.jsonl",
        "positions": out / "positions.jsonl",
    }
    paths["metrics"].write_text(metrics_csv(result.rows))
    paths["episodes"].write_text(_jsonl({"format_version": LOG_VERSION, "kind": "episodes", **meta},
                                        result.episodes))
    paths["positions"].write_text(_jsonl({"format_version": LOG_VERSION, "kind": "positions", **meta},
                                         result.positions))
    return paths


@dataclass
class TuneResult:
    best: dict
    table: list[dict]


def grid_search_tune(env: EnvSpec, mppi: MppiConfig, num_samples: int, grid: dict[str, Sequence],
                     episodes: int, tune_seed: int, threads: int = 1) -> TuneResult:
    """Score every grid point on the tuning suite and return the best one.

    Points are ranked by success rate, then by lower mean episode cost; ties
    go to the earliest point in the grid's lexicographic order.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("tuning grid must be non-empty")
    unknown = set(grid) - set(TUNED_KEYS)
    if unknown:
        raise ValueError(f"cannot tune {sorted(unknown)}; tunable keys are {TUNED_KEYS}")
    names = list(grid)
    points = [dict(zip(names, values)) for values in itertools.product(*(grid[k] for k in names))]
    seeds = episode_seeds(tune_seed, episodes)
    jobs = []
    for point in points:
        cfg = tuned_config(mppi, num_samples, point, env.control_dim)
        jobs += [(env, cfg, s, None, False) for s in seeds]
    outputs = _map(_episode_job, jobs, threads)

    table = []
    for i, point in enumerate(points):
        eps = [o[0] for o in outputs[i * episodes : (i + 1) * episodes]]
        table.append({**_jsonable(point), "success_rate": success_rate(eps),
                      "mean_cost": float(np.mean([ep.total_cost for ep in eps]))})
    best = min(range(len(points)), key=lambda i: (-table[i]["success_rate"], table[i]["mean_cost"], i))
    return TuneResult(_jsonable(points[best]), table)


def _as_variance(v, control_dim: int) -> tuple[float, ...]:
    v = tuple(float(x) for x in np.atleast_1d(v))
    return v * control_dim if len(v) == 1 else v


def _jsonable(point: dict) -> dict:
    return {k: ([float(x) for x in np.atleast_1d(v)] if k == "init_variance" else float(v))
            for k, v in point.items()}

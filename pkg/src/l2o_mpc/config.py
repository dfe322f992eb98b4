"""Run configuration: one JSON file with a block per subsystem.

Every block is checked against its dataclass before any work starts and
unknown keys are rejected, so a typo fails fast instead of silently falling
back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .controller import MppiConfig
from .dagger import DaggerConfig, NetworkConfig
from .environments import ENV_TYPES, EnvSpec, make_env

CONFIG_VERSION = 1
SEED_ENV_VAR = "MPC_SEED"

# large-scale presets for --paper-scale, applied under explicit config entries
FULL_SCALE = {
    "dagger": {"bootstrap_episodes": 1024, "iterations": 20, "rollouts_per_iter": 128,
               "epochs_per_iter": 1000, "batch_size": 8},
    "network": {"hidden": 1024},
}
FULL_SCALE_HIDDEN = {"cartpole": 1024, "reacher2": 2048, "pointmass_obstacles": 4096}


class ConfigError(ValueError):
    """Invalid or unreadable configuration (exit code 2)."""


@dataclass(frozen=True)
class BenchmarkBlock:
    sample_counts: tuple[int, ...] = (64, 8, 4, 2)
    episodes_per_cell: int = 30
    baseline: dict = field(default_factory=dict)
    tune_grid: dict = field(default_factory=lambda: {"temperature": [0.1, 0.3, 1.0]})
    tune_episodes: int = 10

    def __post_init__(self) -> None:
        counts = tuple(int(n) for n in self.sample_counts)
        if not counts or min(counts) < 1:
            raise ValueError("sample_counts must be a non-empty list of positive integers")
        object.__setattr__(self, "sample_counts", counts)
        object.__setattr__(self, "baseline", {int(k): dict(v) for k, v in self.baseline.items()})
        if self.episodes_per_cell < 1 or self.tune_episodes < 1:
            raise ValueError("episode counts must be >= 1")


@dataclass(frozen=True)
class SeedBlock:
    master: int = 0
    test: int = 1000
    tune: int = 2000

    def __post_init__(self) -> None:
        if self.test == self.tune:
            raise ValueError("test and tuning seed streams must differ")


@dataclass(frozen=True)
class RunConfig:
    env: EnvSpec
    controller: MppiConfig
    network: NetworkConfig
    dagger: DaggerConfig
    benchmark: BenchmarkBlock
    seeds: SeedBlock
    raw: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        """Normalised config echo written into output headers."""
        env = {f.name: getattr(self.env, f.name) for f in dataclasses.fields(self.env)}
        bench = dataclasses.asdict(self.benchmark)
        bench["baseline"] = {str(k): v for k, v in self.benchmark.baseline.items()}
        return json.loads(json.dumps({
            "format_version": CONFIG_VERSION,
            "env": {"name": self.env.name, "params": env},
            "controller": dataclasses.asdict(self.controller),
            "network": dataclasses.asdict(self.network),
            "dagger": dataclasses.asdict(self.dagger),
            "benchmark": bench,
            "seeds": dataclasses.asdict(self.seeds),
        }))


def _build(cls, block: dict, name: str, **extra):
    if not isinstance(block, dict):
        raise ConfigError(f"config block {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)} - set(extra)
    unknown = sorted(set(block) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**block, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} block: {exc}") from exc


def parse_config(data: dict, full_scale: bool = False, seed_override: int | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("format_version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config format_version {data.get('format_version')!r}")
    top = {"format_version", "env", "controller", "sampling", "network", "dagger", "benchmark", "seeds"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")

    env_block = dict(data.get("env", {"name": "cartpole"}))
    name = env_block.pop("name", None)
    params = env_block.pop("params", {})
    if env_block:
        raise ConfigError(f"unknown keys in 'env': {', '.join(sorted(env_block))}")
    if name not in ENV_TYPES:
        raise ConfigError(f"unknown env {name!r}; choose from {sorted(ENV_TYPES)}")
    try:
        env = make_env(name, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'env' block: {exc}") from exc

    sampling = dict(data.get("sampling", {}))
    unknown = sorted(set(sampling) - {"skip"})
    if unknown:
        raise ConfigError(f"unknown keys in 'sampling': {', '.join(unknown)}")
    controller = _build(MppiConfig, data.get("controller", {}), "controller",
                        halton_skip=int(sampling.get("skip", 0)))

    net_block = dict(data.get("network", {}))
    dagger_block = dict(data.get("dagger", {}))
    if full_scale:
        net_block = {**FULL_SCALE["network"], "hidden": FULL_SCALE_HIDDEN[name], **net_block}
        dagger_block = {**FULL_SCALE["dagger"], **dagger_block}
    seeds = _build(SeedBlock, data.get("seeds", {}), "seeds")
    if seed_override is not None:
        seeds = dataclasses.replace(seeds, master=seed_override)
    network = _build(NetworkConfig, net_block, "network")
    dagger = _build(DaggerConfig, dagger_block, "dagger", seed=seeds.master)
    if dagger.expert_samples != controller.num_samples:
        raise ConfigError("dagger.expert_samples must equal controller.num_samples")
    benchmark = _build(BenchmarkBlock, data.get("benchmark", {}), "benchmark")
    return RunConfig(env, controller, network, dagger, benchmark, seeds, data)


def load_config(path, full_scale: bool = False) -> RunConfig:
    """Read and validate a config file; ``MPC_SEED`` overrides the master seed."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    override = os.environ.get(SEED_ENV_VAR)
    seed = None
    if override not in (None, ""):
        try:
            seed = int(override)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {override!r}") from exc
    return parse_config(data, full_scale, seed)

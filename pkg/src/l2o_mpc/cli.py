"""Command-line pipeline: tune, bootstrap, train, eval, rollout.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .controller import MppiController, control_step, diagnostics_record
from .dagger import DaggerDataset, bootstrap, dagger_train, expert_config
from .environments import reset, step
from .evaluation import (
    BenchmarkConfig,
    grid_search_tune,
    run_benchmark,
    tuned_config,
    write_benchmark,
)
from .network import LearnedOptimizer
from .sampling import build_sample_bank

log = logging.getLogger("l2o_mpc")

OUTPUT_VERSION = 1
LOSS_FIELDS = ["iteration", "beta", "dataset_size", "train_loss", "val_loss", "last_epoch_val_loss",
               "expert_fraction", "rollout_success_rate"]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _parse_counts(text: str | None, default) -> tuple[int, ...]:
    if text is None:
        return tuple(default)
    try:
        counts = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--samples must be a comma-separated list of integers, got {text!r}") from exc
    if not counts or min(counts) < 1:
        raise ConfigError("--samples entries must be positive")
    return counts


def _load_checkpoint(path) -> LearnedOptimizer:
    try:
        return LearnedOptimizer.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {path}") from exc


def _baseline_table(cfg: RunConfig, hyper_path) -> dict[int, dict]:
    table = dict(cfg.benchmark.baseline)
    if hyper_path:
        try:
            data = json.loads(Path(hyper_path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"hyperparameter file not found: {hyper_path}") from exc
        if data.get("format_version") != OUTPUT_VERSION:
            raise ConfigError(f"{hyper_path}: unsupported format_version")
        table.update({int(k): v["best"] for k, v in data["results"].items()})
    return table


# ---------------------------------------------------------------------------
# commands


def cmd_tune(cfg: RunConfig, args) -> None:
    counts = _parse_counts(args.samples, cfg.benchmark.sample_counts)
    results = {}
    for n in counts:
        res = grid_search_tune(cfg.env, cfg.controller, n, cfg.benchmark.tune_grid,
                               cfg.benchmark.tune_episodes, cfg.seeds.tune, args.threads)
        log.info("tuned %d samples: %s", n, res.best)
        results[str(n)] = {"best": res.best, "table": res.table}
    _write(args.out, _dump({"format_version": OUTPUT_VERSION, "env": cfg.env.name,
                            "tune_seed": cfg.seeds.tune, "results": results}))


def cmd_bootstrap(cfg: RunConfig, args) -> None:
    episodes = cfg.dagger.bootstrap_episodes if args.episodes is None else args.episodes
    mppi = expert_config(cfg.controller, cfg.dagger)
    data = bootstrap(cfg.env, mppi, cfg.dagger, episodes=episodes, threads=args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save(out, {"kind": "dagger_dataset", "config": cfg.to_dict(), "episodes": episodes})


def cmd_train(cfg: RunConfig, args) -> None:
    dataset = None
    if args.dataset:
        try:
            dataset, _ = DaggerDataset.load(args.dataset)
        except FileNotFoundError as exc:
            raise ConfigError(f"dataset not found: {args.dataset}") from exc
    learner, history, _ = dagger_train(cfg.env, cfg.controller, cfg.dagger, cfg.network,
                                       dataset=dataset, threads=args.threads)
    learner.meta = {**learner.meta, "controller": cfg.to_dict()["controller"]}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    learner.save(out)
    buf = io.StringIO()
    buf.write(f"# format_version={OUTPUT_VERSION}\n")
    writer = csv.DictWriter(buf, LOSS_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOSS_FIELDS})
    _write(loss_path(out), buf.getvalue())


def loss_path(checkpoint) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.stem + ".losses.csv")


def cmd_eval(cfg: RunConfig, args) -> None:
    counts = _parse_counts(args.samples, cfg.benchmark.sample_counts)
    learned = {}
    for path in args.checkpoint or []:
        opt = _load_checkpoint(path)
        learned[opt.num_samples] = opt
    baseline = _baseline_table(cfg, args.hyper)
    try:
        bench = BenchmarkConfig(cfg.env, cfg.controller, counts, baseline, learned,
                                episodes_per_cell=cfg.benchmark.episodes_per_cell,
                                test_seed=cfg.seeds.test)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = run_benchmark(bench, threads=args.threads)
    write_benchmark(result, args.out, {"env": cfg.env.name, "test_seed": cfg.seeds.test})
    for row in result.rows:
        log.info("%s N=%d success %.2f%%", row.controller, row.num_samples, row.success_rate)


def cmd_rollout(cfg: RunConfig, args) -> None:
    n = args.samples or cfg.controller.num_samples
    mppi = cfg.controller.replace(num_samples=n)
    update_fn = None
    if args.controller == "learned":
        if not args.checkpoint:
            raise ConfigError("--controller learned needs --checkpoint")
        update_fn = _load_checkpoint(args.checkpoint)
        mppi = mppi.replace(num_samples=update_fn.num_samples)
    elif args.checkpoint:
        raise ConfigError("--checkpoint only applies to --controller learned")
    else:
        params = _baseline_table(cfg, args.hyper).get(n)
        if params:
            mppi = tuned_config(mppi, n, params, cfg.env.control_dim)
    _write(args.out, _dump(rollout_record(cfg, mppi, update_fn, args.seed, args.controller)))


def rollout_record(cfg: RunConfig, mppi, update_fn, seed: int, controller: str) -> dict:
    """One seeded episode with a per-step dump of state, control and objective."""
    env = cfg.env
    state, episode_env = reset(env, seed)
    bank = build_sample_bank(mppi.num_samples, mppi.horizon, env.control_dim, mppi.halton_skip)
    ctrl = MppiController(mppi, episode_env, bank, update_fn)
    steps, states = [], [state]
    for t in range(episode_env.episode_length):
        u, _, batch = control_step(ctrl, state)
        diag = diagnostics_record(t, batch, mppi.temperature)
        steps.append({"t": t, "state": state.tolist(), "control": u.tolist(),
                      "objective": diag["objective"], "weight_entropy": diag["weight_entropy"],
                      "running_cost": float(episode_env.running_cost(state, u))})
        state = step(episode_env, state, u)
        states.append(state)
        ctrl.shift()
    return {
        "format_version": OUTPUT_VERSION,
        "env": env.name,
        "scenario": episode_env.scenario(),
        "controller": controller,
        "num_samples": mppi.num_samples,
        "seed": seed,
        "steps": steps,
        "final_state": state.tolist(),
        "success": episode_env.success(np.array(states)),
    }


COMMANDS = {"tune": cmd_tune, "bootstrap": cmd_bootstrap, "train": cmd_train,
            "eval": cmd_eval, "rollout": cmd_rollout}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="run configuration (JSON)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker processes; 1 guarantees bit-reproducible output")
    common.add_argument("--paper-scale", dest="full_scale", action="store_true",
                        help="use the large DAgger and network presets instead of desk-scale defaults")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="l2o-mpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", parents=[common], help="grid-search baseline MPPI per sample count")
    p.add_argument("--env", help="override the config's env name")
    p.add_argument("--samples", help="comma-separated sample counts")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bootstrap", parents=[common], help="expert-only dataset")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="DAgger training of the learned optimiser")
    p.add_argument("--dataset", help="bootstrap dataset; generated when omitted")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="fixed-seed benchmark")
    p.add_argument("--checkpoint", action="append", help="learned optimiser (repeat for several sample counts)")
    p.add_argument("--hyper", help="tuned baseline hyperparameters from 'tune'")
    p.add_argument("--samples", help="comma-separated sample counts")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("rollout", parents=[common], help="dump one seeded episode")
    p.add_argument("--controller", choices=["mppi", "learned"], default="mppi")
    p.add_argument("--checkpoint")
    p.add_argument("--hyper")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, full_scale=args.full_scale)
        if getattr(args, "env", None) and args.env != cfg.env.name:
            from .config import parse_config

            raw = dict(cfg.raw)
            raw["env"] = {"name": args.env}
            cfg = parse_config(raw, args.full_scale, cfg.seeds.master)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

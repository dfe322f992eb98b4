import json
from pathlib import Path

import numpy as np
import pytest

from l2o_mpc.cli import loss_path, main
from l2o_mpc.config import ConfigError, load_config, parse_config
from l2o_mpc.environments import make_env, step
from l2o_mpc.evaluation import read_metrics_csv
from l2o_mpc.network import LearnedOptimizer

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


def smoke(**overrides) -> dict:
    data = json.loads(SMOKE.read_text())
    for key, value in overrides.items():
        data[key] = {**data.get(key, {}), **value}
    return data


def write_config(tmp_path, data, name="cfg.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_missing_config_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("tune", missing, "--out", tmp_path / "h.json", "--threads", 1) == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("patch", [
    {"controller": {"bogus": 1}},
    {"dagger": {"mixing_base": 1.5}},
    {"controller": {"temperature": 0.0}},
    {"seeds": {"test": 5, "tune": 5}},
    {"env": {"name": "moon"}},
])
def test_invalid_config_exits_2(tmp_path, patch):
    cfg = write_config(tmp_path, smoke(**patch))
    out = tmp_path / "h.json"
    assert run("tune", cfg, "--out", out, "--threads", 1) == 2
    assert not out.exists()


def test_unknown_top_level_key():
    with pytest.raises(ConfigError):
        parse_config({**smoke(), "extra": {}})


def test_full_scale_preset_and_seed_override(monkeypatch):
    data = smoke()
    data["dagger"] = {"epochs_per_iter": 3, "expert_samples": 8}
    del data["network"]
    cfg = parse_config(data, full_scale=True)
    assert cfg.dagger.bootstrap_episodes == 1024 and cfg.dagger.iterations == 20
    assert cfg.dagger.rollouts_per_iter == 128 and cfg.network.hidden == 1024
    assert cfg.dagger.epochs_per_iter == 3  # explicit entries win
    monkeypatch.setenv("MPC_SEED", "77")
    loaded = load_config(SMOKE)
    assert loaded.seeds.master == 77 and loaded.dagger.seed == 77
    monkeypatch.setenv("MPC_SEED", "x")
    with pytest.raises(ConfigError):
        load_config(SMOKE)


def test_tune_writes_one_entry_per_count_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("tune", SMOKE, "--out", a, "--threads", 1) == 0
    assert run("tune", SMOKE, "--out", b, "--threads", 1) == 0
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert data["format_version"] == 1
    assert sorted(data["results"]) == ["2", "8"]
    assert run("tune", SMOKE, "--samples", "2", "--out", a, "--threads", 1) == 0
    assert list(json.loads(a.read_text())["results"]) == ["2"]


def test_bootstrap_line_count_and_header(tmp_path):
    cfg = write_config(tmp_path, smoke(env={"params": {"episode_length": 200}},
                                       controller={"horizon": 4, "num_samples": 2},
                                       dagger={"expert_samples": 2}))
    out = tmp_path / "d.jsonl"
    assert run("bootstrap", cfg, "--episodes", 2, "--out", out, "--threads", 1) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 401
    header = json.loads(lines[0])
    assert header["format_version"] == 1 and header["seed"] == 0
    assert header["config"]["controller"]["num_samples"] == 2


def test_train_from_truncated_dataset_exits_1(tmp_path):
    data = tmp_path / "d.jsonl"
    assert run("bootstrap", SMOKE, "--episodes", 1, "--out", data, "--threads", 1) == 0
    text = data.read_text()
    data.write_text(text[: len(text) - 40])
    assert run("train", SMOKE, "--dataset", data, "--out", tmp_path / "n.json", "--threads", 1) == 1


def test_train_eval_rollout_pipeline(tmp_path):
    data = tmp_path / "d.jsonl"
    ckpt = tmp_path / "net.json"
    assert run("bootstrap", SMOKE, "--out", data, "--threads", 1) == 0
    assert run("train", SMOKE, "--dataset", data, "--out", ckpt, "--threads", 1) == 0
    losses = loss_path(ckpt).read_text().splitlines()
    assert losses[0].startswith("# format_version=1")
    assert len(losses) == 2 + 1  # comment, header, K = 1 rows
    opt = LearnedOptimizer.load(ckpt)
    opt.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == ckpt.read_bytes()

    base_dir, pair_dir = tmp_path / "base", tmp_path / "pair"
    assert run("eval", SMOKE, "--out", base_dir, "--threads", 1) == 0
    rows = read_metrics_csv(base_dir / "metrics.csv")
    assert [(r["controller"], r["num_samples"]) for r in rows] == [("mppi", "8"), ("mppi", "2")]
    assert run("eval", SMOKE, "--checkpoint", ckpt, "--out", pair_dir, "--threads", 1) == 0
    rows = read_metrics_csv(pair_dir / "metrics.csv")
    assert [(r["controller"], r["num_samples"]) for r in rows] == [
        ("mppi", "8"), ("mppi", "2"), ("learned", "2")]
    first = json.loads((pair_dir / "episodes.jsonl").read_text().splitlines()[0])
    assert first["format_version"] == 1
    positions = (pair_dir / "positions.jsonl").read_text().splitlines()
    assert len(positions) == 1 + 3 * 2

    out = tmp_path / "roll.json"
    assert run("rollout", SMOKE, "--controller", "learned", "--checkpoint", ckpt, "--seed", 3, "--out", out,
               "--threads", 1) == 0
    assert len(json.loads(out.read_text())["steps"]) == 20


def test_eval_missing_checkpoint_exits_2(tmp_path):
    assert run("eval", SMOKE, "--checkpoint", tmp_path / "none.json", "--out", tmp_path / "o", "--threads", 1) == 2


def test_eval_gate_closed_stub_matches_identity_baseline(tmp_path):
    # a closed-gate network leaves the plan untouched; so does MPPI with a
    # vanishing step size, so both controllers fly the same trajectories
    data = smoke(benchmark={"sample_counts": [2], "baseline": {"2": {"step_size_mean": 1e-300}}})
    cfg = write_config(tmp_path, data)
    opt = LearnedOptimizer.create(8, 1, 2, 4, np.random.default_rng(0))
    opt.mlp.weights[-1][:] = 0.0
    opt.mlp.biases[-1][:] = -1000.0
    ckpt = tmp_path / "stub.json"
    opt.save(ckpt)
    assert run("eval", cfg, "--checkpoint", ckpt, "--out", tmp_path / "o", "--threads", 1) == 0
    rows = read_metrics_csv(tmp_path / "o" / "metrics.csv")
    assert rows[1]["controller"] == "learned"
    assert float(rows[1]["relative_length"]) == 1.0


def test_rollout_replay_and_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("rollout", SMOKE, "--seed", 4, "--out", a, "--threads", 1) == 0
    assert run("rollout", SMOKE, "--seed", 4, "--out", b, "--threads", 1) == 0
    assert a.read_bytes() == b.read_bytes()
    dump = json.loads(a.read_text())
    assert len(dump["steps"]) == 20
    env = make_env("cartpole", episode_length=20)
    state = np.array(dump["steps"][0]["state"])
    for rec, nxt in zip(dump["steps"], dump["steps"][1:] + [{"state": dump["final_state"]}]):
        state = step(env, state, rec["control"])
        assert np.max(np.abs(state - np.array(nxt["state"]))) <= 1e-9
    assert {"objective", "weight_entropy", "control", "state"} <= set(dump["steps"][0])


def test_rollout_learned_needs_checkpoint(tmp_path):
    assert run("rollout", SMOKE, "--controller", "learned", "--out", tmp_path / "r.json", "--threads", 1) == 2


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "l2o_mpc", "rollout", str(SMOKE), "--seed", "1",
                          "--out", str(tmp_path / "r.json"), "--threads", "1"], capture_output=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "r.json").exists()

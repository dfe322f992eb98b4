"""
End to end through the command line
===================================

tune -> bootstrap -> train -> eval -> rollout on the tiny smoke config.
Every step writes a versioned file; with ``--threads 1`` rerunning any of
them reproduces the same bytes.
"""

import json
import tempfile
from pathlib import Path

from l2o_mpc.cli import main
from l2o_mpc.evaluation import read_metrics_csv

config = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.json")
out = Path(tempfile.mkdtemp())


def run(*args):
    code = main([*map(str, args), "--threads", "1"])
    assert code == 0, args


run("tune", config, "--out", out / "hyper.json")
print("tuned:", {n: r["best"] for n, r in json.loads((out / "hyper.json").read_text())["results"].items()})

run("bootstrap", config, "--out", out / "boot.jsonl")
print("bootstrap records:", len((out / "boot.jsonl").read_text().splitlines()) - 1)

run("train", config, "--dataset", out / "boot.jsonl", "--out", out / "net.json")
print((out / "net.losses.csv").read_text())

run("eval", config, "--checkpoint", out / "net.json", "--hyper", out / "hyper.json", "--out", out / "bench")
for row in read_metrics_csv(out / "bench" / "metrics.csv"):
    print(row["controller"], row["num_samples"], row["success_rate"], row["relative_length"])

run("rollout", config, "--controller", "learned", "--checkpoint", out / "net.json", "--seed", 3,
    "--out", out / "roll.json")
dump = json.loads((out / "roll.json").read_text())
print("rollout steps:", len(dump["steps"]), " success:", dump["success"])
print("outputs in", out)

"""End-to-end runs: config, training loop, artifacts, sweeps and the CLI.

Outputs go under $MASKXRL_OUTPUT_ROOT (default ./runs).
"""
import json
import os
import tempfile
from pathlib import Path

from maskxrl.harness import load_config, run_experiment, run_tau_sweep
from maskxrl.harness.cli import main

CHAIN = str(Path(__file__).resolve().parent.parent / "configs" / "chain.toml")
os.environ.setdefault("MASKXRL_OUTPUT_ROOT", tempfile.mkdtemp(prefix="maskxrl-demo-"))

# A short chain run; every artifact lands in one directory
cfg = load_config(CHAIN, {"t_max": 5, "eval_interval": 5})
art = run_experiment(cfg)
print("run dir:", art.run_dir)
print(sorted(p.name for p in art.run_dir.iterdir()))
print("last record:", art.records[-1])

# Same seed, same bits
again = run_experiment(cfg.replace(run_name="again"))
print("metrics identical:", again.metrics_jsonl.read_bytes() == art.metrics_jsonl.read_bytes())

# A one-seed threshold sweep gives a small table
table = run_tau_sweep(cfg, [0.3, 0.5], seeds=1)
print(table.format())

# The same things from the command line
code = main(["train", "--config", CHAIN, "--seed", "2", "--disable-comm"])
print("train exit code:", code)
print("bad config exit code:", main(["train", "--config", "does-not-exist.toml"]))
ckpt = next(art.run_dir.glob("checkpoints/iter_*"))
main(["eval", "--checkpoint", str(ckpt)])
print(json.loads((ckpt / "state.json").read_text())["iteration"], "iterations in the checkpoint")

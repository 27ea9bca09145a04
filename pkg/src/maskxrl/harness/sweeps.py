"""Threshold sweeps and ablation comparisons built on :func:`run_experiment`."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .runner import run_experiment

# table column -> MetricsRecord field
TABLE_METRICS = [
    ("final_avg_reward", "final_avg_reward"),
    ("kl_divergence", "kl_divergence"),
    ("fidelity", "fidelity"),
    ("reward_drop", "reward_drop_fraction"),
]

VARIANTS = {
    "full": {"disable_comm": False, "disable_adaptive_epsilon": False},
    "no_comm": {"disable_comm": True, "disable_adaptive_epsilon": False},
    "no_adaptive_eps": {"disable_comm": False, "disable_adaptive_epsilon": True},
}


@dataclass
class SweepRow:
    label: str
    values: dict  # metric -> list of per-seed final values
    iterations_to_target: list = field(default_factory=list)
    flagged: bool = False
    run_ids: list = field(default_factory=list)

    def mean(self, metric):
        return float(np.mean(self.values[metric]))

    def std(self, metric):
        return float(np.std(self.values[metric]))


@dataclass
class SweepTable:
    kind: str
    rows: list
    csv_path: Path | None = None
    text_path: Path | None = None

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def format(self):
        head = f"{self.kind:<18}" + "".join(f"{m:>24}" for m, _ in TABLE_METRICS) + f"{'iters_to_target':>18}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            cells = "".join(f"{r.mean(m):>14.4f} ± {r.std(m):<7.4f}" for m, _ in TABLE_METRICS)
            label = r.label + (" *" if r.flagged else "")
            lines.append(f"{label:<18}{cells}{_fmt_iters(r.iterations_to_target):>18}")
        return "\n".join(lines)


def _fmt_iters(its):
    if not its:
        return "-"
    return "/".join("never" if i is None else str(i) for i in its)


def mean_iterations(its, t_max):
    """Mean iterations to target, counting a run that never reached it as ``t_max + 1``."""
    if not its:
        return float("nan")
    return float(np.mean([t_max + 1 if i is None else i for i in its]))


# final metrics average the last few evaluations to damp evaluation noise
FINAL_WINDOW = 3


def _final_values(art):
    tail = art.records[-FINAL_WINDOW:]
    out = {m: float(np.mean([getattr(r, f) for r in tail])) for m, f in TABLE_METRICS}
    out["reward_drop_abs"] = float(np.mean([r.reward_drop_abs for r in tail]))
    return out


def _run_group(base, label, changes, seeds, out_root):
    vals = {m: [] for m, _ in TABLE_METRICS}
    vals["reward_drop_abs"] = []
    row = SweepRow(label=label, values=vals)
    for s in seeds:
        cfg = base.replace(**changes, seed=int(s), output_dir=str(out_root),
                           run_name=f"{label}-s{s}")
        art = run_experiment(cfg)
        for k, v in _final_values(art).items():
            vals[k].append(v)
        row.iterations_to_target.append(art.target_iteration)
        row.run_ids.append(art.run_id)
    return row


def _write(table, out_root):
    out_root.mkdir(parents=True, exist_ok=True)
    csv_path = out_root / f"{table.kind}.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "flagged", "n_seeds"]
                   + [f"{m}_{s}" for m, _ in TABLE_METRICS for s in ("mean", "std")]
                   + ["reward_drop_abs_mean", "iterations_to_target"])
        for r in table.rows:
            w.writerow([r.label, int(r.flagged), len(r.run_ids)]
                       + [repr(x) for m, _ in TABLE_METRICS for x in (r.mean(m), r.std(m))]
                       + [repr(r.mean("reward_drop_abs")), json.dumps(r.iterations_to_target)])
    text_path = out_root / f"{table.kind}.txt"
    text_path.write_text(table.format() + "\n")
    table.csv_path, table.text_path = csv_path, text_path
    return table


def _seed_list(seeds):
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigError("need at least one seed")
        return list(range(seeds))
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    return seeds


def run_tau_sweep(base, taus, seeds=3, out_dir=None):
    """One group of runs per threshold; returns a :class:`SweepTable` keyed ``tau=<value>``.

    ``seeds`` is a count (seeds 0..n-1) or an explicit list. A single threshold
    is allowed and gives a one-row table; repeated thresholds are rejected.
    """
    taus = [float(t) for t in taus]
    if not taus:
        raise ConfigError("tau sweep needs at least one threshold")
    if len(set(taus)) != len(taus):
        raise ConfigError(f"duplicate tau values in {taus}")
    for t in taus:
        if not 0 < t < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {t}")
    seeds = _seed_list(seeds)
    out_root = Path(out_dir) if out_dir else base.output_root() / f"sweep-tau-{base.fingerprint()}"
    rows = []
    for t in taus:
        mask = {**base.to_dict()["mask"], "tau": t}
        rows.append(_run_group(base, f"tau={t:g}", {"mask": mask}, seeds, out_root))
    return _write(SweepTable(kind="tau_sweep", rows=rows), out_root)


def run_ablations(base, seeds=3, out_dir=None):
    """Full method against the no-Comm and constant-epsilon variants, matched seeds."""
    seeds = _seed_list(seeds)
    out_root = Path(out_dir) if out_dir else base.output_root() / f"ablate-{base.fingerprint()}"
    rows = []
    for label, changes in VARIANTS.items():
        row = _run_group(base, label, changes, seeds, out_root)
        row.flagged = label == "full"
        rows.append(row)
    return _write(SweepTable(kind="ablations", rows=rows), out_root)

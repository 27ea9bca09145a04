"""Evaluation metrics: KL policy shift, inter-agent fidelity, reward drop, final reward."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .errors import ShapeError
from .masking import mask_kl_penalty, mask_values, state_key
from .policy import KL_FLOOR, kl_rows, legal_mask
from .rollout import policy_joint_action


@dataclass
class MetricsRecord:
    iteration: int
    final_avg_reward: float
    kl_divergence: float
    fidelity: float
    reward_drop_fraction: float
    n_eval_episodes: int
    seed: int
    reward_std: float = 0.0
    masked_avg_reward: float = 0.0
    reward_drop_abs: float = 0.0
    fidelity_rank: float = 0.0
    frac_randomized: float = 0.0

    def validate(self):
        vals = asdict(self)
        for k, v in vals.items():
            if not np.isfinite(v):
                raise ValueError(f"metrics field {k} is not finite: {v}")
        if self.kl_divergence < 0:
            raise ValueError("kl_divergence must be >= 0")
        if self.n_eval_episodes < 1:
            raise ValueError("n_eval_episodes must be >= 1")
        return self


METRIC_COLUMNS = [f.name for f in fields(MetricsRecord)]


def append_metrics(run_dir, record, run_id):
    """Append one record to ``metrics.csv`` and ``metrics.jsonl`` under ``run_dir``."""
    run_dir = Path(run_dir)
    row = {"run_id": run_id, **asdict(record)}
    csv_path = run_dir / "metrics.csv"
    new = not csv_path.exists()
    with open(csv_path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["run_id", *METRIC_COLUMNS])
        if new:
            w.writeheader()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    with open(run_dir / "metrics.jsonl", "a") as f:
        f.write(json.dumps(row) + "\n")


def read_metrics(run_dir):
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no metrics.jsonl in {run_dir}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def kl_divergence(p, q):
    """``sum p * ln(p / q)`` with ``q`` floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"distributions must share one support, got {p.shape} and {q.shape}")
    for name, d in (("p", p), ("q", q)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability distribution")
    return float(kl_rows(p, q, KL_FLOOR))


def policy_shift_kl(policy_net, mask_net, states, tau, legal=None):
    """Mean hard-gate KL(pi || pi_masked) over ``states``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.size == 0 or len(states) == 0:
        raise ValueError("policy_shift_kl needs at least one state")
    m = mask_values(mask_net, states)
    return mask_kl_penalty(policy_net, m, states, tau, legal=legal, soft=False)


def fidelity_between_agents(mask_vals, tau):
    """Mean pairwise agreement of binary mask decisions (``m <= tau``).

    ``mask_vals`` has one row per agent and one column per shared state.
    """
    mv = np.asarray(mask_vals, dtype=np.float64)
    if mv.ndim != 2 or mv.shape[0] < 2:
        raise ValueError("fidelity needs mask values from at least 2 agents")
    if mv.shape[1] < 1:
        raise ValueError("fidelity needs at least one shared state")
    decisions = mv <= tau
    agree = [np.mean(decisions[i] == decisions[j]) for i, j in combinations(range(len(mv)), 2)]
    return float(np.mean(agree))


def fidelity_rank_correlation(mask_vals):
    """Mean pairwise Spearman correlation of mask values (logged alongside fidelity)."""
    mv = np.asarray(mask_vals, dtype=np.float64)
    if mv.shape[1] < 2:
        return 0.0
    out = []
    for i, j in combinations(range(len(mv)), 2):
        if np.ptp(mv[i]) == 0 or np.ptp(mv[j]) == 0:
            out.append(0.0)
            continue
        out.append(float(spearmanr(mv[i], mv[j]).statistic))
    return float(np.mean(out))


@dataclass
class RewardDrop:
    fraction: float
    clean_mean: float
    perturbed_mean: float
    flagged: bool
    n_perturbed_steps: int

    @property
    def absolute(self):
        """Degradation in return units (positive when perturbation hurts)."""
        return self.clean_mean - self.perturbed_mean


def _play_perturbed(env, policies, seed, stream, cont_seed, agent_id, keys, prng=None):
    """One episode; at the agent's first visit to a key state the sampling
    stream switches to ``cont_seed`` (in both arms, so continuations are
    paired). With ``prng`` every visit to a key state takes a uniform legal action."""
    obs = env.reset(seed)
    rng = np.random.default_rng(stream)
    switched = False
    total = np.zeros(env.spec.n_agents)
    hits = 0
    while not env.episode_done:
        hit = bool(obs.active[agent_id]) and state_key(obs.per_agent[agent_id]) in keys
        if hit and not switched:
            rng = np.random.default_rng(cont_seed)
            switched = True
        actions = policy_joint_action(env, obs, policies, rng)
        if hit and prng is not None:
            legal = env.legal_actions(agent_id)
            actions[agent_id] = int(legal[int(prng.integers(len(legal)))])
            hits += 1
        res = env.step(actions)
        total += res.rewards
        obs = res.next_obs
    return total[agent_id], hits


def reward_drop_after_perturbation(env, policies, agent_id, critical_states, n_episodes, seeds, rng,
                                   streams=None):
    """Signed fractional return change when ``agent_id`` acts uniformly at random
    in every visited state that belongs to ``critical_states``.

    Each episode is played twice from the same seed, once clean and once
    perturbed. Both arms share the action-sampling stream up to the first
    critical visit and a fresh common stream after it. The stream for episode
    ``j`` is the ``j``-th draw ``rng.integers(2**63)``, so a caller can replay
    the clean trajectories it used to pick ``critical_states``. Passing
    ``streams`` (one per episode) fixes them directly; repeated seeds and
    streams then share a trajectory prefix while the perturbation and the
    continuation are redrawn. If the clean mean is below 1e-6 in magnitude the
    absolute difference is returned and ``flagged`` is set.
    """
    if n_episodes < 2:
        raise ValueError("reward drop needs n_episodes >= 2")
    keys = set()
    for x in critical_states:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (env.spec.obs_dim,):
            raise ShapeError(f"critical state has shape {x.shape}, env observes {env.spec.obs_dim}")
        keys.add(state_key(x))
    seeds = list(seeds)[:n_episodes]
    if len(seeds) < n_episodes:
        raise ValueError("not enough seeds for the requested episodes")
    if streams is not None:
        streams = [int(s) for s in streams][:n_episodes]
        if len(streams) < n_episodes:
            raise ValueError("not enough streams for the requested episodes")
    else:
        streams = [int(rng.integers(2**63)) for _ in seeds]
    clean, pert = [], []
    n_hits = 0
    for j, (seed, stream) in enumerate(zip(seeds, streams)):
        cont = [stream, 2, j]
        r, _ = _play_perturbed(env, policies, seed, stream, cont, agent_id, keys)
        clean.append(r)
        r, h = _play_perturbed(env, policies, seed, stream, cont, agent_id, keys,
                               prng=np.random.default_rng([stream, 1, j]))
        pert.append(r)
        n_hits += h
    c, p = float(np.mean(clean)), float(np.mean(pert))
    if abs(c) < 1e-6:
        return RewardDrop(fraction=p - c, clean_mean=c, perturbed_mean=p, flagged=True, n_perturbed_steps=n_hits)
    return RewardDrop(fraction=(p - c) / abs(c), clean_mean=c, perturbed_mean=p, flagged=False,
                      n_perturbed_steps=n_hits)


def final_average_reward(returns):
    """Mean and (population) standard deviation of episode returns."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        raise ValueError("final_average_reward needs at least one return")
    return float(r.mean()), float(r.std())


def legal_matrix(legals, n_actions):
    return np.stack([legal_mask(l, n_actions) for l in legals])

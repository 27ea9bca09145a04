"""State-mask networks: masked action selection, mask training, saliency probing.

A mask network maps an observation to ``m`` in [0, 1]. When ``m > tau`` the
agent follows its policy; when ``m <= tau`` it takes a uniformly random legal
action. Training pushes ``m`` up at states whose randomization changes the
return (so those states keep the policy) while the batch-mean of ``m`` is held
at ``tau``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import GradientTape
from .policy import kl_rows, legal_mask, policy_probs, restrict, sample_action
from .rollout import continue_episode, policy_joint_action

SOURCES = ("policy", "uniform", "epsilon_random")


@dataclass
class MaskConfig:
    tau: float = 0.5
    surrogate_weight: float = 1.0
    reward_weight: float = 1.0
    kl_weight: float = 0.0
    # logged only: the fidelity term has no trainable form here
    fidelity_weight: float = 0.0
    lr: float = 1e-3
    # subtract the mean probe deviation before scoring (variance reduction)
    reward_baseline: bool = True

    def validate(self):
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        for name in ("surrogate_weight", "reward_weight", "kl_weight", "fidelity_weight", "lr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")
        return self


@dataclass
class MaskDecision:
    mask_value: float
    randomized: bool
    action: int
    source: str
    probs: np.ndarray | None = field(default=None, repr=False)


@dataclass
class PairedRollout:
    """Return with and without randomization at ``states`` (rows of features)."""

    states: np.ndarray
    return_clean: float
    return_masked: float
    agent_id: int = 0

    @property
    def deviation(self):
        return abs(self.return_clean - self.return_masked)


@dataclass
class CriticalStateEntry:
    features: np.ndarray
    score: float
    agent_id: int
    timestep: int
    insertion_tick: int = 0
    episode: int = 0
    mask_value: float = float("nan")
    mask_selected: bool = False
    visits: int = 1

    @property
    def state_hash(self):
        return state_hash(self.features)


def state_key(x):
    """Hashable key for exact feature equality after rounding to 1e-9."""
    return tuple(np.round(np.asarray(x, dtype=np.float64), 9).tolist())


def state_hash(x):
    return hashlib.sha1(repr(state_key(x)).encode()).hexdigest()[:12]


def mask_value(mask_net, obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1 or obs.shape[0] != mask_net.in_dim:
        raise ShapeError(f"mask net expects observation of length {mask_net.in_dim}, got {obs.shape}")
    return float(mask_net.forward(obs, cache=False)[0])


def mask_values(mask_net, states):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    return mask_net.forward(states, cache=False)[:, 0]


def masked_action(policy_net, mask_net, obs, legal, tau, rng, m=None):
    """Apply the threshold rule: policy sample if ``m > tau``, else uniform over ``legal``."""
    if len(legal) == 0:
        raise ValueError("legal action set is empty")
    if m is None:
        m = mask_value(mask_net, obs)
    if m > tau:
        a, p = sample_action(policy_net, obs, legal, rng)
        return MaskDecision(mask_value=m, randomized=False, action=a, source="policy", probs=p)
    p = policy_probs(policy_net, obs, legal)
    a = int(legal[int(rng.integers(len(legal)))])
    return MaskDecision(mask_value=m, randomized=True, action=a, source="uniform", probs=p)


def surrogate_mask_loss(mask_vals, tau):
    """Squared error between the batch-mean mask and ``tau``."""
    mask_vals = np.asarray(mask_vals, dtype=np.float64)
    if mask_vals.size == 0:
        raise ValueError("surrogate mask loss needs a non-empty batch")
    return float((mask_vals.mean() - tau) ** 2)


def _gated(pi, m, uniform, tau, soft):
    m = np.asarray(m, dtype=np.float64)[:, None]
    if soft:
        return m * pi + (1.0 - m) * uniform
    return np.where(m > tau, pi, uniform)


def _policy_and_uniform(policy_net, states, legal):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if not len(states):
        raise ValueError("KL penalty needs at least one state")
    raw = policy_net.forward(states, cache=False)
    if legal is None:
        lm = np.ones_like(raw, dtype=bool)
    else:
        lm = np.asarray(legal, dtype=bool)
    pi = restrict(raw, lm)
    uniform = lm / lm.sum(axis=1, keepdims=True)
    return pi, uniform


def mask_kl_penalty(policy_net, mask_vals, states, tau, legal=None, soft=False):
    """Mean KL(pi || pi_masked) over ``states``.

    Hard gate: ``pi_masked`` is ``pi`` where ``m > tau``, else uniform over the
    legal actions. Soft gate: ``m * pi + (1 - m) * uniform``. ``legal`` is an
    optional boolean matrix (states x actions); default is all actions legal.
    """
    pi, uniform = _policy_and_uniform(policy_net, states, legal)
    q = _gated(pi, mask_vals, uniform, tau, soft)
    return float(np.mean(kl_rows(pi, q)))


def mask_update(mask_net, opt, batch_states, probes, cfg, policy_net=None, kl_legal=None):
    """One gradient step on the combined mask loss.

    ``batch_states`` are rollout observations (for the mean-mask surrogate and
    the soft-gate KL term); ``probes`` are :class:`PairedRollout` records.
    The reward-preservation term is a likelihood-ratio estimator that treats
    the gate as Bernoulli(m) and scores each randomized state by
    ``log(1 - m) * |R_clean - R_masked|``, whose gradient lowers the expected
    deviation. With ``reward_baseline`` the mean deviation over the probes is
    subtracted first, so cheap-to-randomize states are pushed below ``tau``.
    """
    if not probes:
        raise ValueError("mask_update needs paired rollouts; collect evaluation episodes first")
    batch_states = np.atleast_2d(np.asarray(batch_states, dtype=np.float64))
    tape = GradientTape(mask_net)
    tau = cfg.tau

    m = mask_net.forward(batch_states)[:, 0]
    n = len(m)
    surrogate = float((m.mean() - tau) ** 2)
    dz = np.full(n, cfg.surrogate_weight * 2.0 * (m.mean() - tau) / n) * m * (1.0 - m)

    kl = 0.0
    if policy_net is not None:
        pi, uniform = _policy_and_uniform(policy_net, batch_states, kl_legal)
        q = _gated(pi, m, uniform, tau, soft=True)
        kl = float(np.mean(kl_rows(pi, q)))
        if cfg.kl_weight > 0:
            # dKL/dm = -sum pi (pi - u) / q
            dkl_dm = -(pi * (pi - uniform) / np.maximum(q, 1e-12)).sum(axis=1)
            dz += cfg.kl_weight * dkl_dm / n * m * (1.0 - m)
    mask_net.backward(tape, dz[:, None], preactivation=True)

    probe_states = np.concatenate([np.atleast_2d(p.states) for p in probes])
    deviations = np.concatenate([np.full(len(np.atleast_2d(p.states)), p.deviation) for p in probes])
    mp = mask_net.forward(probe_states)[:, 0]
    k = len(mp)
    scores = deviations - deviations.mean() if cfg.reward_baseline else deviations
    log_gate = np.log(np.maximum(1.0 - mp, 1e-12))
    reward_term = float(np.mean(log_gate * scores))
    # d/dz log(1 - sigmoid(z)) = -m
    dzp = cfg.reward_weight * (-mp) * scores / k
    mask_net.backward(tape, dzp[:, None], preactivation=True)

    if cfg.surrogate_weight > 0 or cfg.reward_weight > 0 or cfg.kl_weight > 0:
        opt.step(mask_net, tape)
    else:
        tape.zero()
    total = cfg.surrogate_weight * surrogate + cfg.reward_weight * reward_term + cfg.kl_weight * kl
    return {
        "mask_loss": total,
        "surrogate": surrogate,
        "reward_term": reward_term,
        "kl_term": kl,
        "mean_mask": float(m.mean()),
        "frac_randomized": float(np.mean(m <= tau)),
        "mean_deviation": float(deviations.mean()),
    }


def stratified_uniform(legal, n, rng):
    """``n`` legal actions: cycles through a random permutation so every
    action appears ``n // len(legal)`` or one more times."""
    perm = [int(legal[i]) for i in rng.permutation(len(legal))]
    return [perm[j % len(perm)] for j in range(n)]


def branch_saliency(env, policies, agent_id, n_pairs, rng):
    """Expected return drop for ``agent_id`` when its action at the env's
    current state is replaced by a uniform legal action.

    Each pair shares a random stream between the clean branch (policy action)
    and the perturbed branch (stratified uniform action). Returns
    ``(mean_clean, mean_perturbed)`` of the agent's return from this tick on.
    """
    obs = env.observe()
    legal = env.legal_actions(agent_id)
    pert_actions = stratified_uniform(legal, n_pairs, rng)
    clean, pert = [], []
    for j in range(n_pairs):
        seed = int(rng.integers(2**63))
        r1 = np.random.default_rng(seed)
        base = policy_joint_action(env, obs, policies, r1)
        # clean branch keeps the sampled policy action, perturbed swaps it
        e1 = env.clone()
        clean.append(continue_episode(e1, policies, r1, first_actions=base)[agent_id])
        r2 = np.random.default_rng(seed)
        base2 = policy_joint_action(env, obs, policies, r2)
        base2[agent_id] = pert_actions[j]
        e2 = env.clone()
        pert.append(continue_episode(e2, policies, r2, first_actions=base2)[agent_id])
    return float(np.mean(clean)), float(np.mean(pert))


def identify_critical_states(env, policies, mask_net, agent_id, n_eval, tau, seeds, rng,
                             perturb_filter=None, streams=None):
    """Rank the states ``agent_id`` visits by perturbation saliency.

    For each seed an episode is played with all policies; at each state where
    the agent acts (and ``perturb_filter(obs, t)`` allows it), ``n_eval``
    paired continuations measure the mean return drop from a uniform legal
    action. Repeated states are merged (visit-weighted mean score). Entries
    are returned sorted by score, highest first. ``streams`` optionally fixes
    the action-sampling stream of each episode, so the same trajectories can
    be replayed later.
    """
    if n_eval < 2:
        raise ValueError("identify_critical_states needs n_eval >= 2")
    merged = {}
    for ep, seed in enumerate(seeds):
        obs = env.reset(seed)
        if streams is not None:
            ep_rng = np.random.default_rng(int(streams[ep]))
        else:
            ep_rng = np.random.default_rng([int(seed), agent_id, 17])
        while not env.episode_done:
            if obs.active[agent_id]:
                x = obs.per_agent[agent_id]
                if perturb_filter is None or perturb_filter(x, obs.tick):
                    clean, pert = branch_saliency(env, policies, agent_id, n_eval, rng)
                    score = clean - pert
                    key = state_key(x)
                    if key in merged:
                        e = merged[key]
                        e.score = (e.score * e.visits + score) / (e.visits + 1)
                        e.visits += 1
                    else:
                        m = mask_value(mask_net, x) if mask_net is not None else float("nan")
                        merged[key] = CriticalStateEntry(
                            features=np.array(x), score=score, agent_id=agent_id, timestep=obs.tick,
                            episode=ep, mask_value=m, mask_selected=bool(m <= tau))
            actions = policy_joint_action(env, obs, policies, ep_rng)
            obs = env.step(actions).next_obs
    entries = list(merged.values())
    entries.sort(key=lambda e: -e.score)
    return entries


def write_critical_states_csv(path, entries):
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["agent_id", "episode", "t", "state_hash", "mask_value", "saliency_score"])
        for e in entries:
            w.writerow([e.agent_id, e.episode, e.timestep, e.state_hash, repr(float(e.mask_value)),
                        repr(float(e.score))])

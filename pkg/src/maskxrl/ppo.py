"""Clipped-surrogate policy optimization with generalized advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NonFiniteError
from .nn import GradientTape


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 64
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    lr: float = 3e-4
    normalize_advantages: bool = True

    def validate(self):
        if not 0 < self.clip_eps < 1:
            raise ConfigError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ConfigError("epochs and minibatch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        return self


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    done: bool
    legal: np.ndarray  # boolean, one entry per action
    log_prob: float
    value: float
    mask_value: float
    randomized: bool = False
    source: str = "policy"
    next_obs: np.ndarray | None = None


@dataclass
class MaskedRolloutBatch:
    """One agent's rollout data, stored column-wise."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    legal: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    mask_values: np.ndarray
    randomized: np.ndarray
    advantages: np.ndarray = field(default=None, repr=False)
    returns: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_segments(cls, segments, gamma, gae_lambda):
        """Build a batch from ``[(transitions, bootstrap_value), ...]``.

        Each segment is a contiguous stretch of one environment copy; GAE runs
        per segment with its own bootstrap value.
        """
        cols = {k: [] for k in ("obs", "actions", "rewards", "dones", "legal", "log_probs",
                                "values", "mask_values", "randomized")}
        advs, rets = [], []
        for transitions, bootstrap in segments:
            if not transitions:
                continue
            r = np.array([t.reward for t in transitions], dtype=np.float64)
            v = np.array([t.value for t in transitions], dtype=np.float64)
            d = np.array([t.done for t in transitions], dtype=bool)
            a, ret = compute_gae(r, v, d, gamma, gae_lambda, last_value=bootstrap)
            advs.append(a)
            rets.append(ret)
            cols["obs"].append(np.stack([t.obs for t in transitions]))
            cols["actions"].append(np.array([t.action for t in transitions], dtype=np.int64))
            cols["rewards"].append(r)
            cols["dones"].append(d)
            cols["legal"].append(np.stack([t.legal for t in transitions]))
            cols["log_probs"].append(np.array([t.log_prob for t in transitions]))
            cols["values"].append(v)
            cols["mask_values"].append(np.array([t.mask_value for t in transitions]))
            cols["randomized"].append(np.array([t.randomized for t in transitions], dtype=bool))
        if not advs:
            raise ValueError("no transitions in any segment")
        batch = cls(**{k: np.concatenate(v) for k, v in cols.items()})
        batch.advantages = np.concatenate(advs)
        batch.returns = np.concatenate(rets)
        return batch

    def subset(self, idx):
        out = MaskedRolloutBatch(**{k: getattr(self, k)[idx] for k in (
            "obs", "actions", "rewards", "dones", "legal", "log_probs", "values",
            "mask_values", "randomized")})
        out.advantages = self.advantages[idx]
        out.returns = self.returns[idx]
        return out


def compute_gae(rewards, values, dones, gamma, gae_lambda, last_value=0.0):
    """Backward GAE recursion.

    ``dones[t]`` marks that the episode ended after step ``t``; ``last_value``
    bootstraps the state after the final step (pass 0 when it is terminal).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if not (len(values) == len(dones) == n):
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros(n)
    gae = 0.0
    next_value = float(last_value)
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        gae = delta + gamma * gae_lambda * nonterminal * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def masked_log_softmax(logits, legal):
    """Log-probabilities renormalized over legal actions (illegal entries = -inf)."""
    z = np.where(legal, logits, -np.inf)
    return z - logsumexp(z, axis=-1, keepdims=True)


def legal_probs(probs, legal):
    """Restrict a distribution to ``legal`` and renormalize."""
    p = np.where(legal, probs, 0.0)
    s = p.sum(axis=-1, keepdims=True)
    return p / s


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    if len(adv) <= 1:
        return adv.copy()
    centered = adv - adv.mean()
    std = centered.std()
    if std == 0.0:
        return centered
    return centered / (std + 1e-8)


def surrogate_terms(ratio, advantages, clip_eps):
    """Per-step ``min(r * A, clip(r, 1-eps, 1+eps) * A)``."""
    return np.minimum(ratio * advantages, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * advantages)


def _ratios(old_log_probs, new_log_probs):
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(np.asarray(new_log_probs) - np.asarray(old_log_probs))
    bad = np.flatnonzero(~np.isfinite(ratio))
    if bad.size:
        raise NonFiniteError(f"non-finite probability ratio at step {int(bad[0])}")
    return ratio


def clipped_surrogate_loss(batch, new_log_probs, clip_eps):
    """Negative mean clipped surrogate (the quantity gradient descent minimizes)."""
    ratio = _ratios(batch.log_probs, new_log_probs)
    return -float(np.mean(surrogate_terms(ratio, batch.advantages, clip_eps)))


def ppo_update(policy_net, value_net, batch, cfg, policy_opt, value_opt, rng):
    """Run ``epochs`` passes of minibatch updates on one agent's batch.

    Policy loss is the clipped surrogate minus ``ent_coef`` times entropy;
    the separate value net is fit with ``vf_coef`` times the MSE to returns.
    Returns averaged stats plus the largest |ratio - 1| seen on the first
    minibatch (which must be ~0 since the policy is compared with itself).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    adv_all = normalize_advantages(batch.advantages) if cfg.normalize_advantages else batch.advantages
    p_tape = GradientTape(policy_net)
    v_tape = GradientTape(value_net)
    n = len(batch)
    mb = min(cfg.minibatch_size, n)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "mean_ratio": [], "approx_kl": [],
             "clip_frac": []}
    first_ratio_dev = None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            idx = perm[start:start + mb]
            m = len(idx)
            obs = batch.obs[idx]
            legal = batch.legal[idx]
            actions = batch.actions[idx]
            adv = adv_all[idx]

            logits = policy_net.logits(obs)
            logp_all = masked_log_softmax(logits, legal)
            p = np.exp(logp_all)
            new_logp = logp_all[np.arange(m), actions]
            ratio = _ratios(batch.log_probs[idx], new_logp)
            if first_ratio_dev is None:
                first_ratio_dev = float(np.max(np.abs(ratio - 1.0)))
            terms = surrogate_terms(ratio, adv, cfg.clip_eps)
            policy_loss = -float(np.mean(terms))
            safe_logp = np.where(legal, logp_all, 0.0)
            ent_rows = -(p * safe_logp).sum(axis=1)
            entropy = float(np.mean(ent_rows))

            unclipped = ratio * adv <= np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv
            dlogp = np.where(unclipped, -(adv * ratio) / m, 0.0)
            onehot = np.zeros_like(p)
            onehot[np.arange(m), actions] = 1.0
            dz = dlogp[:, None] * (onehot - p)
            # d(-ent_coef * mean H)/dz, H = -sum p log p over legal actions
            dz += cfg.ent_coef / m * p * (safe_logp + ent_rows[:, None])
            dz = np.where(legal, dz, 0.0)
            policy_net.backward(p_tape, dz, preactivation=True)
            policy_opt.step(policy_net, p_tape)

            v = value_net(obs)[:, 0]
            value_loss = float(np.mean((v - batch.returns[idx]) ** 2))
            dv = cfg.vf_coef * 2.0 * (v - batch.returns[idx]) / m
            value_net.backward(v_tape, dv[:, None])
            value_opt.step(value_net, v_tape)

            log_ratio = new_logp - batch.log_probs[idx]
            stats["policy_loss"].append(policy_loss)
            stats["value_loss"].append(value_loss)
            stats["entropy"].append(entropy)
            stats["mean_ratio"].append(float(np.mean(ratio)))
            stats["approx_kl"].append(float(np.mean((ratio - 1.0) - log_ratio)))
            stats["clip_frac"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)))
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["first_ratio_dev"] = first_ratio_dev
    out["n_updates"] = len(stats["policy_loss"])
    for k, v in out.items():
        if isinstance(v, float) and not np.isfinite(v):
            raise NonFiniteError(f"non-finite PPO statistic {k}")
    return out


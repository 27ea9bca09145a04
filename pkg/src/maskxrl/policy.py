"""Action distributions restricted to legal actions, and KL helpers."""

from __future__ import annotations

import numpy as np

KL_FLOOR = 1e-12


def legal_mask(legal, n_actions):
    m = np.zeros(n_actions, dtype=bool)
    m[list(legal)] = True
    return m


def uniform_over(legal, n_actions):
    u = legal_mask(legal, n_actions).astype(np.float64)
    return u / u.sum()


def restrict(probs, mask):
    """Zero out illegal actions and renormalize; works on a vector or rows."""
    p = np.where(mask, probs, 0.0)
    s = p.sum(axis=-1, keepdims=True)
    # a policy can underflow to 0 on every legal action; fall back to uniform
    fallback = np.where(mask, 1.0, 0.0)
    fallback = fallback / fallback.sum(axis=-1, keepdims=True)
    return np.where(s > 0, p / np.where(s > 0, s, 1.0), fallback)


def policy_probs(policy_net, obs, legal):
    """Policy distribution over all actions, restricted to ``legal``."""
    p = policy_net.forward(obs, cache=False)
    return restrict(p, legal_mask(legal, len(p)))


def sample_action(policy_net, obs, legal, rng):
    """Sample from the legal-restricted policy; returns ``(action, probs)``."""
    p = policy_probs(policy_net, obs, legal)
    cdf = np.cumsum(p)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    a = min(a, len(p) - 1)
    while p[a] == 0.0:  # guard against landing on a zero-width bin at the boundary
        a -= 1
    return a, p


def kl_rows(p, q, floor=KL_FLOOR):
    """Row-wise KL(p || q) with ``q`` floored at ``floor``; 0 * log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.maximum(p, floor)) - np.log(q)), 0.0)
    return terms.sum(axis=-1)

"""ChainMDP: a tiny chain with one decision point, used as an exact oracle.

Each agent walks its own chain of ``length`` positions from 0 to ``length-1``;
every action moves one step forward. At ``decision_index`` the chosen action
fixes the outcome: ``correct_action`` earns ``r_good`` when the chain ends,
anything else earns ``r_bad``. Every step also pays ``step_reward``.

Observation layout (length ``length + 2``): one-hot position, then two flags
``[took_good_branch, took_bad_branch]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiAgentEnv

NONE, GOOD, BAD = 0, 1, 2


@dataclass(frozen=True)
class ChainMdpSpec:
    length: int = 5
    decision_index: int = 2
    r_good: float = 1.0
    r_bad: float = -1.0
    step_reward: float = 0.0
    gamma: float = 1.0
    n_actions: int = 2
    correct_action: int = 0

    def __post_init__(self):
        if self.length < 3:
            raise ValueError("chain length must be >= 3")
        if not 1 <= self.decision_index <= self.length - 2:
            raise ValueError("decision_index must lie in [1, length-2]")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n_actions < 2 or not 0 <= self.correct_action < self.n_actions:
            raise ValueError("bad action configuration")
        if not self.r_good >= self.r_bad:
            raise ValueError("r_good must be >= r_bad")


class ChainEnv(MultiAgentEnv):
    name = "chain"

    def __init__(self, chain=None, n_agents=1):
        super().__init__()
        self.chain = chain or ChainMdpSpec()
        c = self.chain
        self.spec = EnvSpec(n_agents=n_agents, obs_dim=c.length + 2,
                            action_count=c.n_actions, max_episode_steps=c.length - 1)
        self.pos = None
        self.branch = None

    def _reset(self, seed):
        n = self.spec.n_agents
        self.pos = [0] * n
        self.branch = [NONE] * n

    def _legal(self, agent_id):
        return tuple(range(self.chain.n_actions))

    def _observe(self, agent_id):
        c = self.chain
        obs = np.zeros(c.length + 2)
        obs[self.pos[agent_id]] = 1.0
        if self.branch[agent_id] == GOOD:
            obs[c.length] = 1.0
        elif self.branch[agent_id] == BAD:
            obs[c.length + 1] = 1.0
        return obs

    def _apply(self, joint_action):
        c = self.chain
        n = self.spec.n_agents
        rewards = np.zeros(n)
        dones = list(self.dones)
        for i, a in enumerate(joint_action):
            if dones[i]:
                continue
            if self.pos[i] == c.decision_index:
                self.branch[i] = GOOD if a == c.correct_action else BAD
            rewards[i] += c.step_reward
            self.pos[i] += 1
            if self.pos[i] == c.length - 1:
                rewards[i] += c.r_good if self.branch[i] == GOOD else c.r_bad
                dones[i] = True
        return rewards, dones


def _step_value(c, pos, branch, action):
    """Reward and successor for one chain step."""
    if pos == c.decision_index:
        branch = GOOD if action == c.correct_action else BAD
    r = c.step_reward
    pos += 1
    terminal = pos == c.length - 1
    if terminal:
        r += c.r_good if branch == GOOD else c.r_bad
    return r, pos, branch, terminal


def chain_optimal_values(c):
    """Backward dynamic programming over (position, branch).

    Returns ``(V, Q, G)`` dictionaries: discounted optimal values, discounted
    action values and the undiscounted return of the optimal policy from each state.
    """
    V, Q, G = {}, {}, {}
    for pos in range(c.length - 2, -1, -1):
        for branch in (NONE, GOOD, BAD):
            qs, gs = [], []
            for a in range(c.n_actions):
                r, p2, b2, terminal = _step_value(c, pos, branch, a)
                qs.append(r + (0.0 if terminal else c.gamma * V[(p2, b2)]))
                gs.append(r + (0.0 if terminal else G[(p2, b2)]))
            best = int(np.argmax(qs))
            V[(pos, branch)] = qs[best]
            Q[(pos, branch)] = qs
            G[(pos, branch)] = gs[best]
    return V, Q, G


def chain_oracle_drops(c):
    """Exact expected drop in undiscounted episode return when the optimal
    policy's action at each visited position is replaced by a uniform action."""
    V, Q, G = chain_optimal_values(c)
    drops = np.zeros(c.length - 1)
    branch = NONE
    for pos in range(c.length - 1):
        perturbed = []
        for a in range(c.n_actions):
            r, p2, b2, terminal = _step_value(c, pos, branch, a)
            perturbed.append(r + (0.0 if terminal else G[(p2, b2)]))
        drops[pos] = G[(pos, branch)] - float(np.mean(perturbed))
        best = int(np.argmax(Q[(pos, branch)]))
        _, _, branch, _ = _step_value(c, pos, branch, best)
    return drops


def chain_oracle_critical_state(c):
    """Return ``(position, exact_drop)`` of the state whose uniform perturbation
    costs the most expected return under the optimal policy."""
    drops = chain_oracle_drops(c)
    idx = int(np.argmax(drops))
    return idx, float(drops[idx])


def chain_bruteforce_drops(c):
    """Same quantity as :func:`chain_oracle_drops` by enumerating every action sequence."""
    n_steps = c.length - 1

    def rollout(seq):
        pos, branch, disc, undisc = 0, NONE, 0.0, 0.0
        for t, a in enumerate(seq):
            r, pos, branch, _ = _step_value(c, pos, branch, a)
            disc += c.gamma ** t * r
            undisc += r
        return disc, undisc

    seqs = list(itertools.product(range(c.n_actions), repeat=n_steps))
    results = {s: rollout(s) for s in seqs}
    best = max(seqs, key=lambda s: (results[s][0], [-x for x in s]))

    def best_completion(prefix):
        cands = [s for s in seqs if s[:len(prefix)] == prefix]
        s = max(cands, key=lambda s: (results[s][0], [-x for x in s]))
        return results[s][1]

    drops = np.zeros(n_steps)
    for t in range(n_steps):
        pert = [best_completion(best[:t] + (a,)) for a in range(c.n_actions)]
        drops[t] = results[best][1] - float(np.mean(pert))
    return drops

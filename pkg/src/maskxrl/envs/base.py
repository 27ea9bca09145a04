"""Common multi-agent environment interface."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import IllegalActionError, StateError


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    obs_dim: int
    action_count: int
    max_episode_steps: int

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if self.action_count < 2:
            raise ValueError("action_count must be >= 2")
        if self.obs_dim < 1:
            raise ValueError("obs_dim must be >= 1")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")


@dataclass
class JointObservation:
    per_agent: list
    tick: int
    # agents whose action takes effect on the next step (Connect-4 alternates)
    active: tuple

    def __len__(self):
        return len(self.per_agent)


@dataclass
class JointStepResult:
    next_obs: JointObservation
    rewards: np.ndarray
    dones: tuple
    legal_actions: list

    @property
    def episode_done(self):
        return all(self.dones)


class MultiAgentEnv:
    """Base class; subclasses implement ``_reset``, ``_apply``, ``_legal`` and ``_observe``."""

    name = "base"
    spec: EnvSpec

    def __init__(self):
        self.tick = 0
        self.dones = None

    # -- subclass hooks -------------------------------------------------
    def _reset(self, seed):
        raise NotImplementedError

    def _legal(self, agent_id):
        raise NotImplementedError

    def _observe(self, agent_id):
        raise NotImplementedError

    def _active(self):
        return tuple(not d for d in self.dones)

    def _apply(self, joint_action):
        """Advance the dynamics; return per-agent rewards (ndarray) and new done flags."""
        raise NotImplementedError

    # -- public API -----------------------------------------------------
    def reset(self, seed=0):
        self.tick = 0
        self.dones = [False] * self.spec.n_agents
        self._reset(seed)
        return self.observe()

    def observe(self):
        return JointObservation(
            per_agent=[self._observe(i) for i in range(self.spec.n_agents)],
            tick=self.tick,
            active=self._active(),
        )

    def legal_actions(self, agent_id):
        if self.dones is None:
            raise StateError("environment not reset")
        if self.dones[agent_id]:
            return ()
        return self._legal(agent_id)

    @property
    def episode_done(self):
        return self.dones is not None and all(self.dones)

    def step(self, joint_action):
        if self.dones is None:
            raise StateError("environment not reset")
        if self.episode_done:
            raise StateError("episode finished; call reset()")
        if len(joint_action) != self.spec.n_agents:
            raise ValueError(f"expected {self.spec.n_agents} actions, got {len(joint_action)}")
        active = self._active()
        for i, a in enumerate(joint_action):
            if active[i] and int(a) not in self._legal(i):
                raise IllegalActionError(i, a, self._legal(i))
        prev_dones = list(self.dones)
        rewards, dones = self._apply([int(a) if a is not None else None for a in joint_action])
        self.tick += 1
        dones = [d or p for d, p in zip(dones, prev_dones)]
        if self.tick >= self.spec.max_episode_steps:
            dones = [True] * self.spec.n_agents
        self.dones = dones
        obs = self.observe()
        return JointStepResult(
            next_obs=obs,
            rewards=np.asarray(rewards, dtype=np.float64),
            dones=tuple(self.dones),
            legal_actions=[self.legal_actions(i) for i in range(self.spec.n_agents)],
        )

    def clone(self):
        """Independent copy of the current state (for branch rollouts).

        Subclasses keep mutable state in flat lists and arrays, so a one-level
        copy suffices and is much cheaper than ``deepcopy``.
        """
        new = copy.copy(self)
        for k, v in vars(self).items():
            if isinstance(v, list):
                setattr(new, k, list(v))
            elif isinstance(v, np.ndarray):
                setattr(new, k, v.copy())
        return new

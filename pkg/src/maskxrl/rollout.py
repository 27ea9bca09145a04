"""Plain policy rollouts and branch continuations used by evaluation code."""

from __future__ import annotations

import numpy as np

from .policy import sample_action


def policy_joint_action(env, obs, policies, rng):
    """Sample every active agent's action from its policy; inactive agents get 0."""
    actions = []
    for i, net in enumerate(policies):
        if obs.active[i]:
            a, _ = sample_action(net, obs.per_agent[i], env.legal_actions(i), rng)
        else:
            a = 0
        actions.append(a)
    return actions


def continue_episode(env, policies, rng, first_actions=None):
    """Play ``env`` to the end with the policies; returns summed rewards per agent.

    ``first_actions`` overrides the joint action for the first tick (entries
    that are ``None`` are sampled from the policy). The env is mutated.
    """
    total = np.zeros(env.spec.n_agents)
    obs = env.observe()
    first = True
    while not env.episode_done:
        actions = policy_joint_action(env, obs, policies, rng)
        if first and first_actions is not None:
            actions = [a if o is None else o for a, o in zip(actions, first_actions)]
        first = False
        res = env.step(actions)
        total += res.rewards
        obs = res.next_obs
    return total


def run_episode(env, policies, seed, rng, override=None):
    """Play one episode from ``env.reset(seed)``.

    ``override(agent_id, obs_vec, legal, t)`` may return an action to replace
    the policy's sample; the policy is still sampled first so random streams
    stay aligned with an un-overridden run. Returns ``(returns, visits)``
    where ``visits[i]`` lists ``(t, obs, legal)`` for each tick agent i acted.
    """
    obs = env.reset(seed)
    n = env.spec.n_agents
    total = np.zeros(n)
    visits = [[] for _ in range(n)]
    while not env.episode_done:
        actions = policy_joint_action(env, obs, policies, rng)
        for i in range(n):
            if not obs.active[i]:
                continue
            legal = env.legal_actions(i)
            visits[i].append((obs.tick, obs.per_agent[i], legal))
            if override is not None:
                a = override(i, obs.per_agent[i], legal, obs.tick)
                if a is not None:
                    actions[i] = a
        res = env.step(actions)
        total += res.rewards
        obs = res.next_obs
    return total, visits

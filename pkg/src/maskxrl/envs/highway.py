"""Toy multi-agent highway: 3 lanes x 20 cells with stationary obstacles.

Actions: 0 keep, 1 lane-left (towards lane 0), 2 lane-right, 3 accelerate,
4 decelerate. Speeds are 1..``max_speed`` cells per tick. All vehicles move
simultaneously: lane change first, then ``speed`` cells forward.

Rewards per tick: ``0.1 * speed / max_speed`` while alive, -1 on collision
(episode over for that agent), +1 on reaching the last cell. Per-tick reward
therefore lies in [-1, 1.1].

A collision happens when the swept cells of a move contain an obstacle
(after a lane change the current column of the new lane counts too), or when
two agents end a tick in the same cell. Both agents of a pairwise collision
receive -1.

Observation layout for an agent at column ``x`` (length 21): a 3x5 occupancy
window of lanes 0..2 over columns ``x..x+4`` (row-major, other vehicles and
obstacles = 1, the agent itself excluded), one-hot own lane (3), one-hot
speed (2), then ``x / length``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiAgentEnv

KEEP, LEFT, RIGHT, ACCEL, DECEL = range(5)
ACTION_NAMES = ("keep", "lane-left", "lane-right", "accelerate", "decelerate")


@dataclass(frozen=True)
class HighwayConfig:
    n_agents: int = 2
    n_lanes: int = 3
    length: int = 20
    n_obstacles: int = 4
    max_speed: int = 2
    window: int = 5
    max_episode_steps: int = 30
    obstacle_min_x: int = 4

    def __post_init__(self):
        if not 1 <= self.n_agents <= 2 * self.n_lanes:
            raise ValueError("n_agents out of range for the starting grid")
        if self.n_obstacles > self.length - self.obstacle_min_x - 1:
            raise ValueError("too many obstacles for the road length")


class HighwayEnv(MultiAgentEnv):
    name = "highway"

    def __init__(self, config=None):
        super().__init__()
        self.config = config or HighwayConfig()
        c = self.config
        obs_dim = c.n_lanes * c.window + c.n_lanes + c.max_speed + 1
        self.spec = EnvSpec(n_agents=c.n_agents, obs_dim=obs_dim, action_count=5,
                            max_episode_steps=c.max_episode_steps)
        self.lane = self.x = self.speed = None
        self.obstacles = frozenset()
        self.crashed = None

    def _reset(self, seed):
        c = self.config
        rng = np.random.default_rng(seed)
        self.lane = [i % c.n_lanes for i in range(c.n_agents)]
        self.x = [2 * (i // c.n_lanes) for i in range(c.n_agents)]
        self.speed = [1] * c.n_agents
        self.crashed = [False] * c.n_agents
        # at most one obstacle per column, so no column is ever fully blocked
        cols = rng.choice(np.arange(c.obstacle_min_x, c.length - 1), size=c.n_obstacles, replace=False)
        lanes = rng.integers(0, c.n_lanes, size=c.n_obstacles)
        self.obstacles = frozenset((int(l), int(x)) for l, x in zip(lanes, cols))

    def _legal(self, agent_id):
        c = self.config
        legal = [KEEP]
        if self.lane[agent_id] > 0:
            legal.append(LEFT)
        if self.lane[agent_id] < c.n_lanes - 1:
            legal.append(RIGHT)
        if self.speed[agent_id] < c.max_speed:
            legal.append(ACCEL)
        if self.speed[agent_id] > 1:
            legal.append(DECEL)
        return tuple(legal)

    def _observe(self, agent_id):
        c = self.config
        x0 = self.x[agent_id]
        window = np.zeros((c.n_lanes, c.window))
        for (l, x) in self.obstacles:
            if x0 <= x < x0 + c.window:
                window[l, x - x0] = 1.0
        for j in range(c.n_agents):
            if j != agent_id and not self.dones[j] and x0 <= self.x[j] < x0 + c.window:
                window[self.lane[j], self.x[j] - x0] = 1.0
        lane = np.zeros(c.n_lanes)
        lane[self.lane[agent_id]] = 1.0
        speed = np.zeros(c.max_speed)
        speed[self.speed[agent_id] - 1] = 1.0
        return np.concatenate([window.ravel(), lane, speed, [x0 / c.length]])

    def _apply(self, joint_action):
        c = self.config
        n = c.n_agents
        rewards = np.zeros(n)
        dones = list(self.dones)
        moving = [i for i in range(n) if not dones[i]]
        for i in moving:
            a = joint_action[i]
            old_lane, old_x = self.lane[i], self.x[i]
            if a == LEFT:
                self.lane[i] -= 1
            elif a == RIGHT:
                self.lane[i] += 1
            elif a == ACCEL:
                self.speed[i] += 1
            elif a == DECEL:
                self.speed[i] -= 1
            new_x = min(old_x + self.speed[i], c.length - 1)
            start = old_x if self.lane[i] != old_lane else old_x + 1
            hit = any((self.lane[i], x) in self.obstacles for x in range(start, new_x + 1))
            self.x[i] = new_x
            if hit:
                self.crashed[i] = True
        # pairwise collisions among agents still on the road (finish line excluded)
        for ii, i in enumerate(moving):
            for j in moving[ii + 1:]:
                if (self.lane[i], self.x[i]) == (self.lane[j], self.x[j]) and self.x[i] < c.length - 1:
                    self.crashed[i] = self.crashed[j] = True
        for i in moving:
            if self.crashed[i]:
                rewards[i] = -1.0
                dones[i] = True
                continue
            rewards[i] = 0.1 * self.speed[i] / c.max_speed
            if self.x[i] >= c.length - 1:
                rewards[i] += 1.0
                dones[i] = True
        return rewards, dones

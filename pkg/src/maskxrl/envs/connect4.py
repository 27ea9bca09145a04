"""Connect-4 on a 7-column x 6-row board as a two-agent alternating game.

Agent 0 moves first. Only the agent to move is *active*; the waiting agent's
action is ignored and it receives reward 0 on that tick, except on the
terminal tick, when the winner gets +1 and the loser -1 (draw: 0 each).

Observation layout for agent ``i`` (length 85): 42 cells of own tokens,
42 cells of opponent tokens (row-major, row 0 = top), then 1.0 if agent ``i``
is to move.
"""

from __future__ import annotations

import numpy as np

from .base import EnvSpec, MultiAgentEnv

ROWS, COLS = 6, 7


def winning_lines():
    """All 69 sets of four aligned cells as lists of (row, col)."""
    lines = []
    for r in range(ROWS):
        for c in range(COLS):
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                cells = [(r + k * dr, c + k * dc) for k in range(4)]
                if all(0 <= rr < ROWS and 0 <= cc < COLS for rr, cc in cells):
                    lines.append(cells)
    return lines


class Connect4Env(MultiAgentEnv):
    name = "connect4"

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec(n_agents=2, obs_dim=2 * ROWS * COLS + 1, action_count=COLS,
                            max_episode_steps=ROWS * COLS)
        self.board = None
        self.to_move = 0
        self.winner = None

    def _reset(self, seed):
        self.board = np.zeros((ROWS, COLS), dtype=np.int8)
        self.to_move = 0
        self.winner = None

    def _active(self):
        if all(self.dones):
            return (False, False)
        return tuple(i == self.to_move for i in range(2))

    def _legal(self, agent_id):
        return tuple(int(c) for c in np.flatnonzero(self.board[0] == 0))

    def _observe(self, agent_id):
        own = (self.board == agent_id + 1).ravel()
        opp = (self.board == 2 - agent_id).ravel()
        turn = 1.0 if (not all(self.dones) and self.to_move == agent_id) else 0.0
        return np.concatenate([own, opp, [turn]]).astype(np.float64)

    def _drop(self, col, token):
        row = int(np.max(np.flatnonzero(self.board[:, col] == 0)))
        self.board[row, col] = token
        return row

    def _wins_at(self, row, col, token):
        b = self.board
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            n = 1
            for sgn in (1, -1):
                r, c = row + sgn * dr, col + sgn * dc
                while 0 <= r < ROWS and 0 <= c < COLS and b[r, c] == token:
                    n += 1
                    r += sgn * dr
                    c += sgn * dc
            if n >= 4:
                return True
        return False

    def _apply(self, joint_action):
        mover = self.to_move
        col = joint_action[mover]
        row = self._drop(col, mover + 1)
        rewards = np.zeros(2)
        if self._wins_at(row, col, mover + 1):
            self.winner = mover
            rewards[mover] = 1.0
            rewards[1 - mover] = -1.0
            return rewards, [True, True]
        if not np.any(self.board[0] == 0):
            return rewards, [True, True]
        self.to_move = 1 - mover
        return rewards, [False, False]

    def token_counts(self):
        return int(np.sum(self.board == 1)), int(np.sum(self.board == 2))

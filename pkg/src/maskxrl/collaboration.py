"""Inter-agent collaboration: decaying epsilon-greedy, Comm union, shared buffer."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .masking import CriticalStateEntry, state_key


@dataclass
class EpsilonSchedule:
    eps0: float = 1.0
    decay: float = 5e-4

    def validate(self):
        if not 0 <= self.eps0 <= 1:
            raise ConfigError(f"eps0 must lie in [0, 1], got {self.eps0}")
        if self.decay < 0:
            raise ConfigError(f"decay must be non-negative, got {self.decay}")
        return self


def epsilon_at(schedule, t):
    """``eps0 * exp(-decay * t)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return schedule.eps0 * math.exp(-schedule.decay * t)


def apply_exploration(decision, eps, legal, rng):
    """With probability ``eps`` replace the action by a uniform legal one.

    Exactly one uniform draw is consumed per call (plus one more on replacement).
    """
    if rng.random() < eps:
        a = int(legal[int(rng.integers(len(legal)))])
        return replace(decision, action=a, source="epsilon_random")
    return decision


def comm_union(local_sets):
    """Union of per-agent state sets, deduplicated by rounded feature equality.

    Order is first appearance; returns a list of feature arrays.
    """
    seen = {}
    for states in local_sets:
        for x in states:
            k = state_key(x)
            if k not in seen:
                seen[k] = np.asarray(x, dtype=np.float64)
    return list(seen.values())


def exploration_weight(state, entries, delta, w_min=0.2):
    """``w_min`` if ``state`` lies within ``delta`` of any broadcast entry, else 1."""
    if not entries:
        return 1.0
    feats = np.stack([e.features for e in entries])
    d = np.sqrt(((feats - np.asarray(state, dtype=np.float64)) ** 2).sum(axis=1))
    return w_min if float(d.min()) <= delta else 1.0


class SharedBuffer:
    """Bounded store of critical states ranked by saliency score.

    When full, the lowest-score entry is evicted (oldest first among ties).
    :meth:`broadcast_topk` releases the top ``topk`` entries on ticks that
    are multiples of ``interval``. Insert and broadcast are serialized by a lock.
    """

    def __init__(self, capacity=512, interval=50, topk=16, delta=0.1, w_min=0.2):
        if capacity < 0 or interval < 1 or topk < 1 or delta < 0 or not 0 <= w_min <= 1:
            raise ConfigError("invalid shared buffer parameters")
        self.capacity = capacity
        self.interval = interval
        self.topk = topk
        self.delta = delta
        self.w_min = w_min
        self.entries = []
        self._counter = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.entries)

    def insert(self, entry):
        with self._lock:
            if self.capacity == 0:
                return self
            entry = replace(entry, insertion_tick=self._counter)
            self._counter += 1
            self.entries.append(entry)
            if len(self.entries) > self.capacity:
                worst = min(range(len(self.entries)),
                            key=lambda i: (self.entries[i].score, self.entries[i].insertion_tick))
                del self.entries[worst]
            return self

    def top(self, k=None):
        k = self.topk if k is None else k
        ranked = sorted(self.entries, key=lambda e: (-e.score, e.insertion_tick))
        return ranked[:k]

    def broadcast_topk(self, tick):
        if tick < 0:
            raise ValueError("tick must be non-negative")
        with self._lock:
            if tick % self.interval != 0:
                return []
            return self.top()

    def weight(self, state, entries):
        return exploration_weight(state, entries, self.delta, self.w_min)

    def to_json(self):
        return json.dumps({
            "capacity": self.capacity, "interval": self.interval, "topk": self.topk,
            "delta": self.delta, "w_min": self.w_min, "counter": self._counter,
            "entries": [{
                "features": e.features.tolist(), "score": e.score, "agent_id": e.agent_id,
                "timestep": e.timestep, "insertion_tick": e.insertion_tick,
            } for e in self.entries],
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        buf = cls(d["capacity"], d["interval"], d["topk"], d["delta"], d["w_min"])
        buf._counter = d["counter"]
        buf.entries = [CriticalStateEntry(features=np.array(e["features"]), score=e["score"],
                                          agent_id=e["agent_id"], timestep=e["timestep"],
                                          insertion_tick=e["insertion_tick"])
                       for e in d["entries"]]
        return buf


def buffer_insert(buffer, entry):
    return buffer.insert(entry)


def broadcast_topk(buffer, tick):
    return buffer.broadcast_topk(tick)


__all__ = ["EpsilonSchedule", "SharedBuffer", "apply_exploration", "broadcast_topk",
           "buffer_insert", "comm_union", "epsilon_at", "exploration_weight"]

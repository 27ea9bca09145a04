"""Decaying exploration, the Comm union and the shared critical-state buffer."""
import numpy as np

from maskxrl.collaboration import (EpsilonSchedule, SharedBuffer, apply_exploration, comm_union,
                                   epsilon_at)
from maskxrl.masking import CriticalStateEntry, MaskDecision

sched = EpsilonSchedule(eps0=1.0, decay=1e-3)
for t in (0, 500, 1000, 5000):
    print(f"epsilon at t={t}: {epsilon_at(sched, t):.4f}")

rng = np.random.default_rng(0)
d = MaskDecision(mask_value=0.9, randomized=False, action=0, source="policy")
hits = sum(apply_exploration(d, 0.25, (0, 1, 2), rng).source == "epsilon_random" for _ in range(20000))
print("replacement rate at eps=0.25:", hits / 20000)

# Agents' masked states are merged without duplicates
a = [np.array([0.0, 1.0]), np.array([1.0, 1.0])]
b = [np.array([1.0, 1.0]), np.array([2.0, 0.0])]
print("union size:", len(comm_union([a, b])))

# The buffer keeps the highest-scoring states and releases its top-K every 50 ticks
buf = SharedBuffer(capacity=4, interval=50, topk=2, delta=0.1, w_min=0.2)
for i, s in enumerate(rng.uniform(size=8)):
    buf.insert(CriticalStateEntry(features=np.array([float(i), 0.0]), score=float(s), agent_id=i % 2, timestep=i))
print("kept scores:", sorted(round(e.score, 3) for e in buf.entries))
print("tick 49 broadcast:", buf.broadcast_topk(49))
shared = buf.broadcast_topk(50)
print("tick 50 broadcast:", [round(e.score, 3) for e in shared])

# Exploration is damped near states another agent already flagged
near = shared[0].features + 0.05
print("weight near a broadcast state:", buf.weight(near, shared), "far away:", buf.weight(near + 10, shared))

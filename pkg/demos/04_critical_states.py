"""Mask network, threshold rule and saliency scores on the chain."""
import numpy as np

from maskxrl.envs import ChainEnv, chain_oracle_critical_state
from maskxrl.masking import (MaskConfig, PairedRollout, identify_critical_states, mask_update,
                             mask_values, masked_action)
from maskxrl.nn import Adam, MlpNet, make_mask_net

env = ChainEnv()
c = env.chain

# An expert policy that always takes the correct action
policy = MlpNet([env.spec.obs_dim, 2], output_activation="softmax")
policy.weights[0][...] = 0.0
policy.biases[0][...] = [30.0, -30.0]

# Branch rollouts score each visited state by the return lost under a random action
entries = identify_critical_states(env, [policy], None, agent_id=0, n_eval=8, tau=0.5, seeds=[0],
                                   rng=np.random.default_rng(0))
for e in entries:
    print("position", int(np.argmax(e.features[:c.length])), "saliency", round(e.score, 3))
print("exact answer (position, drop):", chain_oracle_critical_state(c))

# Train a mask: surrogate pulls the mean towards tau, the reward term pushes
# the gate open on states where randomization costs return
rng = np.random.default_rng(1)
mask = make_mask_net(env.spec.obs_dim, rng, hidden=(16, 16))
states = np.stack([e.features for e in sorted(entries, key=lambda e: e.timestep)])
probes = [PairedRollout(states=e.features[None, :], return_clean=1.0, return_masked=1.0 - e.score)
          for e in entries]
cfg = MaskConfig(tau=0.3)
opt = Adam(1e-2)
for _ in range(200):
    stats = mask_update(mask, opt, states, probes, cfg, policy_net=policy)
print("mean mask", round(stats["mean_mask"], 3), "per position", np.round(mask_values(mask, states), 2))

# States with m <= tau get a uniform action, the rest follow the policy
for x in states:
    d = masked_action(policy, mask, x, (0, 1), cfg.tau, rng)
    print("position", int(np.argmax(x[:c.length])), "->", d.source)

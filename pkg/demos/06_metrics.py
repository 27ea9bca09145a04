"""KL policy shift, inter-agent fidelity and reward drop after perturbation."""
import numpy as np

from maskxrl.envs import ChainEnv, chain_oracle_drops
from maskxrl.metrics import (fidelity_between_agents, final_average_reward, kl_divergence,
                             policy_shift_kl, reward_drop_after_perturbation)
from maskxrl.nn import MlpNet, make_mask_net

print("KL([1,0] || [.5,.5]) =", kl_divergence([1.0, 0.0], [0.5, 0.5]), "ln 2 =", np.log(2))

env = ChainEnv()
policy = MlpNet([env.spec.obs_dim, 2], output_activation="softmax")
policy.weights[0][...] = 0.0
policy.biases[0][...] = [30.0, -30.0]

# A mask that randomizes everywhere moves a deterministic policy by ln 2 on two actions
mask = make_mask_net(env.spec.obs_dim, np.random.default_rng(0), hidden=(4,))
mask.set_flat(np.zeros(mask.n_params()))
mask.biases[-1][0] = -2.0
print("policy shift KL:", policy_shift_kl(policy, mask, np.eye(env.spec.obs_dim)[:4], tau=0.5))

# Fidelity: how often two agents agree on which states to randomize
m1 = np.array([0.2, 0.8, 0.4, 0.9])
m2 = np.array([0.3, 0.7, 0.6, 0.1])
print("fidelity:", fidelity_between_agents(np.stack([m1, m2]), tau=0.5))

# A random action at the decision state picks the bad branch half the time (+1 -> -1)
decision = np.zeros(env.spec.obs_dim)
decision[env.chain.decision_index] = 1.0
rd = reward_drop_after_perturbation(env, [policy], 0, [decision], 500, range(500), np.random.default_rng(1))
print(f"reward drop {rd.absolute:.3f} (fraction {rd.fraction:+.3f}), exact "
      f"{chain_oracle_drops(env.chain)[env.chain.decision_index]:.3f}")
print("final average reward of [1, 0, 1]:", final_average_reward([1.0, 0.0, 1.0]))

"""The three environments: a chain with a known critical state, a toy highway and Connect-4."""
import numpy as np

from maskxrl.envs import ChainMdpSpec, chain_oracle_drops, make_env

# The chain has one decision position; dynamic programming gives the exact
# return lost when the optimal action there is replaced by a uniform one
spec = ChainMdpSpec(length=5, decision_index=2)
print("exact drop per position:", chain_oracle_drops(spec))

chain = make_env("chain")
obs = chain.reset(seed=0)
total = 0.0
while not chain.episode_done:
    res = chain.step([spec.correct_action])
    total += res.rewards[0]
print("chain return with the correct action everywhere:", total)

# Toy highway: two cars share lanes; collisions end an agent's episode
hw = make_env("highway", n_agents=2)
rng = np.random.default_rng(1)
obs = hw.reset(seed=3)
print("highway observation width:", hw.spec.obs_dim, "actions:", hw.spec.action_count)
returns = np.zeros(2)
while not hw.episode_done:
    acts = [int(rng.choice(hw.legal_actions(i))) if obs.active[i] else 0 for i in range(2)]
    res = hw.step(acts)
    returns += res.rewards
    obs = res.next_obs
print("random-play highway returns:", returns, "after", hw.tick, "ticks")

# Connect-4: agents alternate, and a waiting agent has no legal move
c4 = make_env("connect4")
obs = c4.reset(seed=0)
for col in (3, 4, 3, 4, 3, 4, 3):
    mover = int(np.flatnonzero(obs.active)[0])
    acts = [col if i == mover else 0 for i in range(2)]
    res = c4.step(acts)
    obs = res.next_obs
print("connect4 rewards after a vertical four:", res.rewards, "done:", c4.episode_done)

# clone() gives an independent copy for branch rollouts
copy = hw.clone()
print("clone shares the tick but not the state object:", copy.tick == hw.tick, copy is not hw)

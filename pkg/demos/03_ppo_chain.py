"""PPO with GAE on the chain, starting from a random policy."""
import numpy as np

from maskxrl.envs import ChainEnv
from maskxrl.nn import Adam, make_policy_net, make_value_net
from maskxrl.policy import legal_mask, sample_action
from maskxrl.ppo import MaskedRolloutBatch, PpoConfig, Transition, ppo_update

rng = np.random.default_rng(0)
env = ChainEnv()
policy = make_policy_net(env.spec.obs_dim, 2, rng, hidden=(16, 16))
value = make_value_net(env.spec.obs_dim, rng, hidden=(16, 16))
cfg = PpoConfig(lr=3e-3, minibatch_size=32)
p_opt, v_opt = Adam(cfg.lr), Adam(cfg.lr)


def collect(n_episodes):
    segments, returns = [], []
    for ep in range(n_episodes):
        obs = env.reset(int(rng.integers(1 << 30)))
        seg, total = [], 0.0
        while not env.episode_done:
            x, legal = obs.per_agent[0], env.legal_actions(0)
            a, p = sample_action(policy, x, legal, rng)
            res = env.step([a])
            seg.append(Transition(obs=x, action=a, reward=float(res.rewards[0]), done=res.dones[0],
                                  legal=legal_mask(legal, 2), log_prob=float(np.log(p[a])),
                                  value=float(value.forward(x)[0]), mask_value=1.0))
            total += res.rewards[0]
            obs = res.next_obs
        segments.append((seg, 0.0))
        returns.append(total)
    return MaskedRolloutBatch.from_segments(segments, cfg.gamma, cfg.gae_lambda), np.mean(returns)


for it in range(15):
    batch, mean_return = collect(32)
    stats = ppo_update(policy, value, batch, cfg, p_opt, v_opt, rng)
    if it % 3 == 0:
        print(f"iteration {it:2d}  mean return {mean_return:+.2f}  policy loss {stats['policy_loss']:+.4f}")

decision = np.zeros(env.spec.obs_dim)
decision[env.chain.decision_index] = 1.0
print("probability of the correct action at the decision:", round(float(policy.forward(decision)[0]), 3))

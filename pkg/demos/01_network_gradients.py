"""Small MLPs with hand-written backprop, checked against finite differences."""
import numpy as np

from maskxrl.nn import Adam, GradientTape, MlpNet, make_mask_net, make_policy_net

rng = np.random.default_rng(0)

# A policy head is a softmax over actions, a mask head a single sigmoid
policy = make_policy_net(obs_dim=6, n_actions=4, rng=rng, hidden=(16, 16))
mask = make_mask_net(obs_dim=6, rng=rng, hidden=(16,))
x = rng.normal(size=6)
print("action probabilities:", np.round(policy.forward(x), 3))
print("mask value:", round(float(mask.forward(x)[0]), 3))

# Backprop a squared error and compare with central differences
net = MlpNet([3, 5, 2], rng=rng)
target = np.array([0.5, -1.0])
tape = GradientTape(net)
net.backward(tape, net.forward(x[:3]) - target)
analytic = tape.get_flat()

flat = net.get_flat()
numeric = np.zeros_like(flat)
for i in range(len(flat)):
    for sign in (1, -1):
        p = flat.copy()
        p[i] += sign * 1e-5
        net.set_flat(p)
        numeric[i] += sign * 0.5 * np.sum((net.forward(x[:3], cache=False) - target) ** 2) / 2e-5
net.set_flat(flat)
print("max |analytic - numeric|:", float(np.abs(analytic - numeric).max()))

# A few Adam steps fit the target
opt = Adam(lr=0.05)
for step in range(200):
    tape = GradientTape(net)
    out = net.forward(x[:3])
    net.backward(tape, out - target)
    opt.step(net, tape)
print("fitted output:", np.round(net.forward(x[:3]), 4), "target:", target)

# Checkpoints round-trip bit-exactly
net.save("/tmp/demo_net.json")
print("reloaded hash matches:", MlpNet.load("/tmp/demo_net.json").param_hash() == net.param_hash())

"""Dense feed-forward networks with hand-written backprop and Adam.

Everything is float64 so gradient checks and checkpoint round trips stay tight.
Inputs may be a single vector ``(in_dim,)`` or a batch ``(batch, in_dim)``;
gradients of a batch are summed over rows.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError, ShapeError, StateError

CHECKPOINT_VERSION = 1
HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity", "softmax", "sigmoid")


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _orthogonal(rng, shape, gain):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MlpNet:
    """Multi-layer perceptron ``tanh -> ... -> output_activation``.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``.
    """

    def __init__(self, layer_dims, output_activation="identity", hidden_activation="tanh",
                 rng=None, hidden_gain=1.0, output_gain=1.0):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ShapeError(f"layer_dims must hold >= 2 positive ints, got {layer_dims}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_dims = layer_dims
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        n_layers = len(layer_dims) - 1
        for l in range(n_layers):
            gain = output_gain if l == n_layers - 1 else hidden_gain
            shape = (layer_dims[l + 1], layer_dims[l])
            self.weights.append(np.ascontiguousarray(_orthogonal(rng, shape, gain)))
            self.biases.append(np.zeros(layer_dims[l + 1]))
        self._cache = None

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def parameters(self):
        """Yield ``(name, array)`` pairs; arrays are the live parameter objects."""
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"W{l}", w
            yield f"b{l}", b

    def n_params(self):
        return sum(p.size for _, p in self.parameters())

    def get_flat(self):
        return np.concatenate([p.ravel() for _, p in self.parameters()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ShapeError(f"expected {self.n_params()} parameters, got {flat.size}")
        i = 0
        for _, p in self.parameters():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self):
        other = object.__new__(MlpNet)
        other.layer_dims = list(self.layer_dims)
        other.hidden_activation = self.hidden_activation
        other.output_activation = self.output_activation
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other._cache = None
        return other

    def param_hash(self):
        h = hashlib.sha256()
        for _, p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def forward(self, x, cache=True):
        """Evaluate the network; caches activations for :meth:`backward` unless ``cache=False``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected input with last dim {self.in_dim}, got shape {x.shape}")
        inputs = []
        h = x
        for l in range(self.n_layers):
            inputs.append(h)
            z = h @ self.weights[l].T + self.biases[l]
            h = np.tanh(z) if l < self.n_layers - 1 else z
        logits = h
        if self.output_activation == "softmax":
            out = softmax(logits)
        elif self.output_activation == "sigmoid":
            out = expit(logits)
        else:
            out = logits
        if cache:
            self._cache = (inputs, logits, out)
        return out

    __call__ = forward

    def logits(self, x):
        """Pre-activation output of the last layer (no caching)."""
        self.forward(x, cache=True)
        return self._cache[1]

    def backward(self, tape, upstream, preactivation=False):
        """Accumulate d(loss)/d(params) into ``tape``.

        ``upstream`` is d(loss)/d(output), or d(loss)/d(logits) when
        ``preactivation`` is true. The forward cache is consumed.
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        inputs, logits, out = self._cache
        self._cache = None
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != out.shape:
            raise ShapeError(f"upstream shape {g.shape} != output shape {out.shape}")
        if not preactivation:
            if self.output_activation == "softmax":
                g = out * (g - (g * out).sum(axis=-1, keepdims=True))
            elif self.output_activation == "sigmoid":
                g = g * out * (1.0 - out)
        for l in range(self.n_layers - 1, -1, -1):
            h_in = inputs[l]
            if g.ndim == 1:
                tape.grads_w[l] += np.outer(g, h_in)
                tape.grads_b[l] += g
            else:
                tape.grads_w[l] += g.T @ h_in
                tape.grads_b[l] += g.sum(axis=0)
            if l > 0:
                g = (g @ self.weights[l]) * (1.0 - h_in ** 2)
        tape.count += 1
        return tape

    def to_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "layer_dims": list(self.layer_dims),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        net = cls(d["layer_dims"], output_activation=d["output_activation"],
                  hidden_activation=d["hidden_activation"])
        for l, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            net.weights[l] = np.array(w, dtype=np.float64).reshape(net.weights[l].shape)
            net.biases[l] = np.array(b, dtype=np.float64)
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class GradientTape:
    """Gradient buffers mirroring a network's parameter shapes."""

    def __init__(self, net):
        self.grads_w = [np.zeros_like(w) for w in net.weights]
        self.grads_b = [np.zeros_like(b) for b in net.biases]
        self.count = 0

    def zero(self):
        for g in self.grads_w + self.grads_b:
            g.fill(0.0)
        self.count = 0

    def items(self):
        for l, (gw, gb) in enumerate(zip(self.grads_w, self.grads_b)):
            yield f"W{l}", gw
            yield f"b{l}", gb

    def get_flat(self):
        return np.concatenate([g.ravel() for _, g in self.items()])


@dataclass
class Adam:
    """Adaptive-moment optimizer state for one network."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")

    def step(self, net, tape):
        """Apply one update from ``tape`` to ``net`` and zero the tape."""
        grads = [g for _, g in tape.items()]
        for name, g in tape.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in layer parameter {name}")
        params = [p for _, p in net.parameters()]
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        tape.zero()
        return net

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_state_dict(cls, d):
        opt = cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], t=d["t"])
        opt.m = [np.array(a, dtype=np.float64) for a in d["m"]]
        opt.v = [np.array(a, dtype=np.float64) for a in d["v"]]
        return opt


def make_policy_net(obs_dim, n_actions, rng, hidden=(64, 64)):
    return MlpNet([obs_dim, *hidden, n_actions], output_activation="softmax", rng=rng,
                  hidden_gain=1.0, output_gain=0.01)


def make_value_net(obs_dim, rng, hidden=(64, 64)):
    return MlpNet([obs_dim, *hidden, 1], output_activation="identity", rng=rng,
                  hidden_gain=1.0, output_gain=1.0)


def make_mask_net(obs_dim, rng, hidden=(64, 64)):
    return MlpNet([obs_dim, *hidden, 1], output_activation="sigmoid", rng=rng,
                  hidden_gain=1.0, output_gain=0.01)

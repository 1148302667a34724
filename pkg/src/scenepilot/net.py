"""Minimal dense-network stack in numpy: MLP forward/backward, a Gaussian
policy head with fixed diagonal std, adaptive-moment SGD, running input
normalization, and npz checkpoints.

Everything runs in float64 on CPU.  The MLP keeps hand-written reverse-mode
gradients, including the second-order pass needed for a gradient penalty on a
scalar-output network (ReLU masks are held fixed, the standard almost-
everywhere derivative).
"""

from __future__ import annotations

import json

import numpy as np

POLICY_STD = 0.055
CHECKPOINT_VERSION = 1


def orthogonal(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init (QR of a Gaussian matrix, sign-fixed), scaled by gain."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Fully connected net, ReLU hidden layers, identity output."""

    def __init__(self, sizes, rng: np.random.Generator = None, out_gain: float = 1.0):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        if rng is None:
            rng = np.random.default_rng(0)
        self.W = []
        self.b = []
        last = len(sizes) - 2
        for k in range(len(sizes) - 1):
            gain = out_gain if k == last else np.sqrt(2.0)
            self.W.append(orthogonal(rng, (sizes[k], sizes[k + 1]), gain))
            self.b.append(np.zeros(sizes[k + 1]))

    @property
    def n_layers(self) -> int:
        return len(self.W)

    def parameters(self) -> list:
        return list(self.W) + list(self.b)

    def set_parameters(self, params) -> None:
        n = self.n_layers
        if len(params) != 2 * n:
            raise ValueError("parameter count mismatch")
        for k in range(n):
            self.W[k] = np.array(params[k], dtype=float)
            self.b[k] = np.array(params[n + k], dtype=float)

    def copy_parameters(self) -> list:
        return [p.copy() for p in self.parameters()]

    def forward(self, x, want_cache: bool = False):
        """(N, in) -> (N, out); cache holds layer inputs and ReLU masks."""
        h = np.asarray(x, dtype=float)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        inputs = []
        masks = []
        for k in range(self.n_layers):
            inputs.append(h)
            z = h @ self.W[k] + self.b[k]
            if k < self.n_layers - 1:
                m = z > 0.0
                masks.append(m)
                h = z * m
            else:
                h = z
        out = h[0] if squeeze else h
        if want_cache:
            return out, (inputs, masks)
        return out

    def __call__(self, x):
        return self.forward(x)

    def backward(self, cache, grad_out):
        """Reverse-mode pass for one forward; returns (grads, grad_input).

        `grads` lines up with parameters(): weight gradients then bias
        gradients, layer by layer.
        """
        inputs, masks = cache
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        dW = [None] * self.n_layers
        db = [None] * self.n_layers
        for k in range(self.n_layers - 1, -1, -1):
            dz = g if k == self.n_layers - 1 else g * masks[k]
            dW[k] = inputs[k].T @ dz
            db[k] = dz.sum(axis=0)
            g = dz @ self.W[k].T
        return dW + db, g

    def input_gradient(self, x):
        """Per-sample gradient of a scalar output wrt the input: (N, in).

        Only valid for nets with output width 1.
        """
        if self.sizes[-1] != 1:
            raise ValueError("input_gradient needs a scalar-output net")
        g, masks, _ = self._input_gradient_parts(x)
        return g

    def _input_gradient_parts(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        _, (inputs, masks) = self.forward(x, want_cache=True)
        u = np.ones((x.shape[0], self.sizes[-1]))
        us = [None] * self.n_layers  # us[k] = d out / d z_k
        us[-1] = u
        for k in range(self.n_layers - 1, 0, -1):
            u = (u @ self.W[k].T) * masks[k - 1]
            us[k - 1] = u
        grad_x = u @ self.W[0].T
        return grad_x, masks, us

    def gradient_penalty(self, x):
        """Mean squared input-gradient norm and its parameter gradients.

        Returns (penalty, grads) where penalty = mean_i |d D(x_i)/d x_i|^2 and
        grads lines up with parameters().  With ReLU masks fixed the penalty
        does not depend on biases, so their gradients are zero.
        """
        if self.sizes[-1] != 1:
            raise ValueError("gradient_penalty needs a scalar-output net")
        g, masks, us = self._input_gradient_parts(x)
        n = g.shape[0]
        penalty = float(np.mean(np.sum(g * g, axis=1)))
        dg = (2.0 / n) * g
        dW = [np.zeros_like(w) for w in self.W]
        dW[0] = dg.T @ us[0]
        p = dg @ self.W[0]
        for k in range(1, self.n_layers):
            q = p * masks[k - 1]
            dW[k] = q.T @ us[k]
            p = q @ self.W[k]
        db = [np.zeros_like(b) for b in self.b]
        return penalty, dW + db

    def state_arrays(self) -> dict:
        d = {"sizes": np.asarray(self.sizes, dtype=np.int64)}
        for k in range(self.n_layers):
            d[f"W{k}"] = self.W[k]
            d[f"b{k}"] = self.b[k]
        return d

    @classmethod
    def from_arrays(cls, d: dict) -> "Mlp":
        net = cls.__new__(cls)
        net.sizes = tuple(int(s) for s in d["sizes"])
        net.W = [np.array(d[f"W{k}"], dtype=float) for k in range(len(net.sizes) - 1)]
        net.b = [np.array(d[f"b{k}"], dtype=float) for k in range(len(net.sizes) - 1)]
        return net


class GaussianPolicy:
    """MLP mean with a fixed diagonal std; the std is never trained."""

    def __init__(self, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator,
                 std: float = POLICY_STD):
        self.net = Mlp((obs_dim,) + tuple(hidden) + (act_dim,), rng, out_gain=0.01)
        self.std = float(std)
        self.act_dim = int(act_dim)

    def mean(self, obs):
        return self.net.forward(obs)

    def sample(self, obs, rng: np.random.Generator):
        """(actions, log_probs) with actions ~ N(mean(obs), std^2 I)."""
        mu = np.atleast_2d(self.net.forward(obs))
        actions = mu + self.std * rng.standard_normal(mu.shape)
        return actions, self.log_prob_given_mean(mu, actions)

    def log_prob_given_mean(self, mu, actions):
        z = (np.asarray(actions) - np.asarray(mu)) / self.std
        k = mu.shape[-1]
        return -0.5 * np.sum(z * z, axis=-1) - k * np.log(self.std) \
            - 0.5 * k * np.log(2.0 * np.pi)

    def log_prob(self, obs, actions):
        return self.log_prob_given_mean(np.atleast_2d(self.net.forward(obs)), actions)

    def dlogp_dmean(self, mu, actions):
        """Gradient of log N(a; mu, std^2 I) wrt mu: (a - mu) / std^2."""
        return (np.asarray(actions) - np.asarray(mu)) / (self.std ** 2)


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grads(grads, max_norm: float):
    """Scale gradients in place so their global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Adaptive-moment SGD over a fixed list of parameter arrays."""

    def __init__(self, params, lr: float = 5e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count mismatch")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> dict:
        d = {"t": np.asarray(self.t, dtype=np.int64)}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            d[f"m{k}"] = m
            d[f"v{k}"] = v
        return d

    def load_arrays(self, d: dict) -> None:
        self.t = int(d["t"])
        self.m = [np.array(d[f"m{k}"], dtype=float) for k in range(len(self.m))]
        self.v = [np.array(d[f"v{k}"], dtype=float) for k in range(len(self.v))]


class RunningMeanStd:
    """Streaming per-dimension mean/variance (parallel-combine update rule)."""

    def __init__(self, dim: int, eps: float = 1e-4):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = float(eps)

    def update(self, x) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if n == 0:
            return
        bm = x.mean(axis=0)
        bv = x.var(axis=0)
        delta = bm - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * (n / tot)
        m_a = self.var * self.count
        m_b = bv * n
        self.var = (m_a + m_b + delta * delta * self.count * n / tot) / tot
        self.count = tot

    def normalize(self, x, clip: float = 10.0):
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -clip, clip)

    def state_arrays(self) -> dict:
        return {"mean": self.mean, "var": self.var,
                "count": np.asarray(self.count)}

    def load_arrays(self, d: dict) -> None:
        self.mean = np.array(d["mean"], dtype=float)
        self.var = np.array(d["var"], dtype=float)
        self.count = float(d["count"])


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Write named array groups plus a JSON meta header to one npz file.

    `arrays` maps group name -> dict of arrays (e.g. an Mlp.state_arrays());
    keys become "group/field".  Round-trips bit-exactly.
    """
    flat = {}
    for group, d in arrays.items():
        for key, val in d.items():
            flat[f"{group}/{key}"] = np.asarray(val)
    header = dict(meta)
    header["version"] = CHECKPOINT_VERSION
    header["groups"] = sorted(arrays)
    np.savez(path, __meta__=np.array(json.dumps(header)), **flat)


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (arrays, meta)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {}
        for key in data.files:
            if key == "__meta__":
                continue
            group, field = key.split("/", 1)
            arrays.setdefault(group, {})[field] = data[key]
    return arrays, meta

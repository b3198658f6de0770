"""Two-layer feed-forward blocks with hand-written backprop, plus Adam."""
from __future__ import annotations

import numpy as np


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class FeedForward:
    """dim_in -> hidden -> dim_out with a softplus between the affine layers.

    The output layer has no activation. `activation="linear"` disables the
    softplus (used by tests and identity harnesses).
    """

    def __init__(self, dim_in, hidden, dim_out, rng=None, activation="softplus", init_std=0.1):
        if activation not in ("softplus", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        self.dim_in = int(dim_in)
        self.hidden = int(hidden)
        self.dim_out = int(dim_out)
        self.activation = activation
        if rng is None:
            self.w1 = np.zeros((dim_in, hidden))
            self.w2 = np.zeros((hidden, dim_out))
        else:
            self.w1 = rng.normal(0.0, init_std, size=(dim_in, hidden))
            self.w2 = rng.normal(0.0, init_std, size=(hidden, dim_out))
        self.b1 = np.zeros(hidden)
        self.b2 = np.zeros(dim_out)

    @classmethod
    def identity(cls, dim, hidden=None):
        """Exact identity map: activation disabled, [I 0] / [I; 0] weights."""
        hidden = 2 * dim if hidden is None else hidden
        if hidden < dim:
            raise ValueError("hidden must be >= dim for an identity block")
        net = cls(dim, hidden, dim, rng=None, activation="linear")
        net.w1[:, :dim] = np.eye(dim)
        net.w2[:dim, :] = np.eye(dim)
        return net

    def forward(self, x):
        """Returns (y, cache) for a (n, dim_in) batch."""
        z = x @ self.w1 + self.b1
        h = softplus(z) if self.activation == "softplus" else z
        y = h @ self.w2 + self.b2
        return y, (x, z, h)

    def backward(self, cache, dy):
        """Gradients for upstream dy; returns (dx, {w1, b1, w2, b2})."""
        x, z, h = cache
        dw2 = h.T @ dy
        db2 = dy.sum(axis=0)
        dh = dy @ self.w2.T
        dz = dh * sigmoid(z) if self.activation == "softplus" else dh
        dw1 = x.T @ dz
        db1 = dz.sum(axis=0)
        dx = dz @ self.w1.T
        return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}

    def apply(self, x):
        return self.forward(x)[0]

    def params(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def copy(self):
        dup = FeedForward(self.dim_in, self.hidden, self.dim_out, rng=None,
                          activation=self.activation)
        dup.w1 = self.w1.copy()
        dup.b1 = self.b1.copy()
        dup.w2 = self.w2.copy()
        dup.b2 = self.b2.copy()
        return dup


class Adam:
    """Adaptive moment estimation over a fixed list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list length mismatch")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

"""Small fully connected network with hand-written reverse mode."""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("softplus", "identity")


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name, z):
    return softplus(z) if name == "softplus" else z


def _dact(name, z):
    return sigmoid(z) if name == "softplus" else np.ones_like(z)


class Mlp:
    """``widths = [in, h1, ..., 1]``; layer ``l`` computes ``act(x @ W_l + b_l)``.

    ``W_l`` has shape ``(in, out)``. Hidden and output activations default to
    softplus, so outputs are nonnegative.
    """

    def __init__(self, widths, weights=None, biases=None, hidden="softplus", output="softplus"):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError("need at least an input and an output width")
        if hidden not in ACTIVATIONS or output not in ACTIVATIONS:
            raise ValueError("unknown activation")
        self.hidden, self.output = hidden, output
        pairs = list(zip(self.widths[:-1], self.widths[1:]))
        self.weights = [np.zeros(p) for p in pairs] if weights is None else [np.asarray(w, dtype=float).reshape(p) for w, p in zip(weights, pairs)]
        self.biases = [np.zeros(p[1]) for p in pairs] if biases is None else [np.asarray(b, dtype=float).reshape(p[1]) for b, p in zip(biases, pairs)]
        if len(self.weights) != len(pairs) or len(self.biases) != len(pairs):
            raise ValueError("weight list does not match widths")

    @classmethod
    def init(cls, widths, rng, **kw) -> "Mlp":
        net = cls(widths, **kw)
        for w in net.weights:
            bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        return net

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def _acts(self):
        n = len(self.weights)
        return [self.hidden] * (n - 1) + [self.output]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[1]}")
        return x, single

    def forward_cache(self, x):
        zs, hs = [], [x]
        for w, b, a in zip(self.weights, self.biases, self._acts()):
            z = hs[-1] @ w + b
            zs.append(z)
            hs.append(_act(a, z))
        return zs, hs

    def forward(self, x):
        x, single = self._check(x)
        out = self.forward_cache(x)[1][-1][:, 0]
        return out[0] if single else out

    def backward(self, zs, hs, upstream, want_weights=True):
        """Propagate ``upstream`` (per-sample d loss / d output) to the input
        and, optionally, to all parameters."""
        g = upstream[:, None] * _dact(self.output, zs[-1])
        gw, gb = [], []
        acts = self._acts()
        for l in range(len(self.weights) - 1, -1, -1):
            if want_weights:
                gw.append(hs[l].T @ g)
                gb.append(g.sum(0))
            g = g @ self.weights[l].T
            if l > 0:
                g = g * _dact(acts[l - 1], zs[l - 1])
        return g, gw[::-1], gb[::-1]

    def grad_input(self, x):
        x, single = self._check(x)
        zs, hs = self.forward_cache(x)
        g, _, _ = self.backward(zs, hs, np.ones(len(x)), want_weights=False)
        return g[0] if single else g

    def grad_weights(self, x, upstream=None):
        """Gradients of ``sum(upstream * output)`` w.r.t. ``(weights, biases)``."""
        x, _ = self._check(x)
        upstream = np.ones(len(x)) if upstream is None else np.broadcast_to(np.asarray(upstream, dtype=float), (len(x),))
        zs, hs = self.forward_cache(x)
        _, gw, gb = self.backward(zs, hs, upstream)
        return gw, gb

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "activations": {"hidden": self.hidden, "output": self.output},
            "layout": "row-major (in, out); y = act(x @ W + b)",
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        acts = d.get("activations", {})
        return cls(d["widths"], d["weights"], d["biases"], acts.get("hidden", "softplus"), acts.get("output", "softplus"))

    def copy(self) -> "Mlp":
        return Mlp(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.hidden, self.output)


def mlp_forward(net: Mlp, x):
    return net.forward(x)


def mlp_grad_input(net: Mlp, x):
    return net.grad_input(x)


def mlp_grad_weights(net: Mlp, x, upstream=None):
    return net.grad_weights(x, upstream)

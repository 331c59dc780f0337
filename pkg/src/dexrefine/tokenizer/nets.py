"""Small numpy MLPs used as per-morphology encoders and decoders."""

from __future__ import annotations

import numpy as np

ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
}


class CoderNet:
    """Fully connected net, activation on hidden layers, linear output layer.

    Args:
        widths: layer widths ``[in, hidden..., out]``.
        weights: list of ``(out, in)`` matrices; ``biases``: list of ``(out,)``.
    """

    def __init__(self, widths, weights, biases, activation: str = "tanh"):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2:
            raise ValueError("a coder net needs at least an input and an output width")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        self.activation = activation
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in biases]
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight matrices does not match the layer widths")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.widths[i + 1], self.widths[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ValueError(f"layer {i}: weight {w.shape}/bias {b.shape}, expected {expect}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @classmethod
    def init(cls, widths, rng: np.random.Generator, activation: str = "tanh") -> CoderNet:
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(widths, weights, biases, activation)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def copy(self) -> CoderNet:
        return CoderNet(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x, keep: bool = False):
        """Apply the net to ``x`` of shape ``(in,)`` or ``(B, in)``.

        With ``keep=True`` also returns the per-layer activations needed by
        :meth:`backward`.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.in_dim:
            raise ValueError(f"input width {h.shape[1]} does not match net input {self.in_dim}")
        act = ACTIVATIONS[self.activation][0]
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = act(h)
            cache.append(h)
        out = h[0] if single else h
        return (out, cache) if keep else out

    __call__ = forward

    def backward(self, cache, grad_out):
        """Backpropagate ``dL/d(output)``.

        Returns:
            grads: list of ``(dW, db)`` per layer.
            grad_in: ``dL/d(input)``.
        """
        dact = ACTIVATIONS[self.activation][1]
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * dact(cache[i + 1])
            grads[i] = (g.T @ cache[i], g.sum(axis=0))
            g = g @ self.weights[i]
        return grads, g

    def apply_gradients(self, grads, lr: float):
        for (w, b), (gw, gb) in zip(zip(self.weights, self.biases), grads):
            w -= lr * gw
            b -= lr * gb

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> CoderNet:
        return cls(doc["widths"], doc["weights"], doc["biases"], doc.get("activation", "tanh"))


def encode(net: CoderNet, chunk) -> np.ndarray:
    return net.forward(chunk)

"""Small fully connected networks with hand-written backpropagation."""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "none")


class MLP:
    """Shared MLP applied along the last axis of its input.

    ``sizes`` lists layer widths including input and output; ``activations``
    has one tag per layer.
    """

    def __init__(self, sizes, activations=None, rng=None, dtype=np.float64, weights=None):
        self.sizes = [int(s) for s in sizes]
        n = len(self.sizes) - 1
        if n < 1:
            raise ValueError("an MLP needs at least one layer")
        if activations is None:
            activations = ["relu"] * (n - 1) + ["none"]
        if isinstance(activations, str):
            activations = [activations] * n
        if len(activations) != n or any(a not in ACTIVATIONS for a in activations):
            raise ValueError(f"bad activation list {activations}")
        self.activations = list(activations)
        self.dtype = dtype
        if weights is not None:
            self.weights = [np.asarray(w, dtype=dtype) for w in weights[0::2]]
            self.biases = [np.asarray(b, dtype=dtype) for b in weights[1::2]]
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            self.weights, self.biases = [], []
            for i, o in zip(self.sizes[:-1], self.sizes[1:]):
                self.weights.append((rng.normal(size=(i, o)) * np.sqrt(2.0 / i)).astype(dtype))
                self.biases.append(np.zeros(o, dtype=dtype))
        for W, (i, o) in zip(self.weights, zip(self.sizes[:-1], self.sizes[1:])):
            if W.shape != (i, o):
                raise ValueError(f"weight shape {W.shape} does not chain as {(i, o)}")
        self._cache = None

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, params):
        self.weights = [p for p in params[0::2]]
        self.biases = [p for p in params[1::2]]

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input has {x.shape[-1]} channels, MLP expects {self.in_dim}")
        lead = x.shape[:-1]
        h = x.reshape(-1, self.in_dim)
        inputs, pre = [], []
        for W, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0) if act == "relu" else z
        if cache:
            self._cache = (lead, inputs, pre)
        return h.reshape(*lead, self.out_dim)

    __call__ = forward

    def backward(self, grad_out):
        """Gradients of the cached forward pass: ([dW0, db0, ...], d_input)."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        lead, inputs, pre = self._cache
        g = np.asarray(grad_out, dtype=self.dtype).reshape(-1, self.out_dim)
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            if self.activations[i] == "relu":
                g = g * (pre[i] > 0)
            grads[2 * i] = inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g.reshape(*lead, self.in_dim)

    def manifest(self):
        return {"sizes": self.sizes, "activations": self.activations}


def mlp_forward(mlp: MLP, x):
    return mlp.forward(x)


def mlp_backward(mlp: MLP, x, grad_out):
    """Run forward on ``x`` then backward; returns (param grads, input grad)."""
    mlp.forward(x)
    return mlp.backward(grad_out)


class SGD:
    """Plain SGD with momentum over a flat list of parameter arrays."""

    def __init__(self, params, lr=1e-2, momentum=0.9, clip=None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads):
        if self.clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip:
                grads = [g * (self.clip / norm) for g in grads]
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v

"""Minimal dense-network core: tanh MLPs with reverse-mode gradients and an
adaptive moment optimizer. Written in plain numpy so every gradient used by
the trainer can be checked against finite differences."""

from __future__ import annotations

import numpy as np


def tanh(x):
    return np.tanh(x)


def dtanh(y):
    # derivative expressed in terms of the activation output
    return 1.0 - y * y


class Mlp:
    """Fully connected net: tanh hidden layers, linear output.

    Parameters are float64; the architecture is fixed at construction.
    """

    def __init__(self, widths, seed: int = 0, final_scale: float = 1.0, final_activation: str = "linear"):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if final_activation not in ("linear", "tanh"):
            raise ValueError("final_activation must be 'linear' or 'tanh'")
        self.widths = tuple(int(w) for w in widths)
        self.final_activation = final_activation
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            if i == len(self.widths) - 2:
                w *= final_scale
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last or self.final_activation == "tanh":
                h = tanh(h)
        return h[0] if squeeze else h

    def forward_cached(self, x: np.ndarray):
        """Returns (output, cache) where cache holds per-layer inputs."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        inputs = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last or self.final_activation == "tanh":
                h = tanh(h)
            inputs.append(h)
        return h, inputs

    def backward(self, cache, grad_out: np.ndarray):
        """Reverse-mode gradients.

        ``cache`` comes from forward_cached; ``grad_out`` is dLoss/dOutput of
        shape (batch, out_dim). Returns (grads, grad_input) with grads in
        parameters() order.
        """
        inputs = cache
        grad = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if grad.shape[1] != self.out_dim:
            raise ValueError(
                f"grad_out dim {grad.shape[1]} != output dim {self.out_dim}"
            )
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            layer_in = inputs[i]
            if i != last or self.final_activation == "tanh":
                grad = grad * dtanh(inputs[i + 1])
            grads_w[i] = grad.T @ layer_in
            grads_b[i] = grad.sum(axis=0)
            if i > 0:
                grad = grad @ self.weights[i]
        grad_input = grad @ self.weights[0] if last >= 0 else grad
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.append(gw)
            out.append(gb)
        return out, grad_input

    # Serialization helpers -------------------------------------------

    def to_arrays(self):
        return [a.copy() for a in self.parameters()]

    def load_arrays(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(params, arrays):
            if dst.shape != src.shape:
                raise ValueError(f"shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src


class Adam:
    """Adaptive per-parameter moment estimation with bias correction."""

    def __init__(self, params, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= lr_t * m / (np.sqrt(v) + self.eps)

    def state_arrays(self):
        return [a.copy() for a in self.m] + [a.copy() for a in self.v]

    def load_state_arrays(self, arrays, t: int) -> None:
        half = len(self.m)
        if len(arrays) != 2 * half:
            raise ValueError("optimizer state count mismatch")
        for dst, src in zip(self.m + self.v, arrays):
            dst[...] = src
        self.t = t


def finite_difference_grads(net: Mlp, x: np.ndarray, loss_fn, eps: float = 1e-6):
    """Central-difference gradient of loss_fn(net.forward(x)) w.r.t. params."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn(net.forward(x))
            flat[i] = orig - eps
            lo = loss_fn(net.forward(x))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads

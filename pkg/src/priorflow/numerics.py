"""Small dense networks with hand-written reverse mode, plus an Adam optimizer.

These are the scale/translation subnets used inside coupling layers. Every
function accepts either a single vector of shape ``(d,)`` or a batch of shape
``(N, d)``; the output has the matching rank.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu")


@dataclass
class MlpParams:
    """Weights ``W[k]`` of shape ``(in, out)`` and biases ``b[k]`` of shape ``(out,)``.

    The activation is applied to hidden layers only; the last layer is affine.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input width {w.shape[0]} does not chain")

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Flat list of parameter arrays (W0, b0, W1, b1, ...), by reference."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation
        )


def init_mlp(widths, rng, activation="tanh", zero_last=False) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.

    With ``zero_last`` the final affine layer starts at zero so the network
    outputs exactly zero, which makes a coupling layer start as the identity.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {widths}")
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        if zero_last and k == len(widths) - 2:
            w[:] = 0.0
            b[:] = 0.0
        weights.append(w)
        biases.append(b)
    return MlpParams(weights, biases, activation)


def _act(h, activation):
    return np.tanh(h) if activation == "tanh" else np.maximum(h, 0.0)


def _act_grad(h, a, activation):
    if activation == "tanh":
        return 1.0 - a * a
    return (h > 0).astype(h.dtype)


def _as_batch(x, width):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != width:
        raise ValueError(f"expected input width {width}, got shape {x.shape}")
    return x2, single


def _forward_cache(params: MlpParams, x2):
    pre, post = [], [x2]
    a = x2
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = a @ w + b
        if k < last:
            pre.append(h)
            a = _act(h, params.activation)
            post.append(a)
        else:
            a = h
    return a, pre, post


def mlp_forward(params: MlpParams, x):
    x2, single = _as_batch(x, params.layer_widths[0])
    out, _, _ = _forward_cache(params, x2)
    return out[0] if single else out


def mlp_gradient(params: MlpParams, x, cotangent):
    """Reverse-mode gradient of ``sum(mlp_forward(x) * cotangent)``.

    Returns ``(grads, input_grad)`` where ``grads`` is an :class:`MlpParams`
    holding dW/db summed over the batch.
    """
    x2, single = _as_batch(x, params.layer_widths[0])
    g, _ = _as_batch(cotangent, params.layer_widths[-1])
    if g.shape[0] != x2.shape[0]:
        raise ValueError("cotangent batch size does not match input")
    _, pre, post = _forward_cache(params, x2)
    grads, g = _backward(params, pre, post, g)
    return grads, (g[0] if single else g)


def _backward(params: MlpParams, pre, post, g):
    n = len(params.weights)
    dws, dbs = [None] * n, [None] * n
    for k in range(n - 1, -1, -1):
        dws[k] = post[k].T @ g
        dbs[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
        if k > 0:
            g = g * _act_grad(pre[k - 1], post[k], params.activation)
    return MlpParams(dws, dbs, params.activation), g


@dataclass
class Adam:
    """Adam with bias-corrected moments.

    ``step`` updates the parameter arrays in place. Non-finite gradients are
    logged and the step is skipped (the step counter does not advance).
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> bool:
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not all(np.all(np.isfinite(g)) for g in grads):
            logger.warning("non-finite gradient at step %d, skipping update", self.t + 1)
            return False
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm and norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm

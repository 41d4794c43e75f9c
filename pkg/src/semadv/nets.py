"""Network architectures and the Adam optimizer.

Two fixed architectures: a small two-conv/two-affine classifier producing
logits, and a deeper swish-activated CNN producing one scalar energy per
image.  Parameters are flat name->Tensor dicts so the optimizer, checkpoint
format and finite-difference tests can treat every network uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


# -- classifier: conv(32,5x5)-relu-pool-conv(64,5x5)-relu-pool-fc(1024)-relu-fc(k)


def init_classifier(rng: np.random.Generator, n_classes: int = 10, dtype=np.float32) -> dict:
    return {
        "conv1.w": _he(rng, (32, 1, 5, 5), 25, dtype),
        "conv1.b": _zeros((32,), dtype),
        "conv2.w": _he(rng, (64, 32, 5, 5), 32 * 25, dtype),
        "conv2.b": _zeros((64,), dtype),
        "fc1.w": _he(rng, (64 * 7 * 7, 1024), 64 * 7 * 7, dtype),
        "fc1.b": _zeros((1024,), dtype),
        "fc2.w": _he(rng, (1024, n_classes), 1024, dtype),
        "fc2.b": _zeros((n_classes,), dtype),
    }


def classifier_logits(params: dict, x: Tensor) -> Tensor:
    """Logits for a (n, 1, 28, 28) batch in [0, 1]."""
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != 28 or x.shape[3] != 28:
        raise T.ShapeError(f"classifier: expected (n, 1, 28, 28) input, got {x.shape}")
    h = T.maxpool2(T.relu(T.conv2d(x, params["conv1.w"], params["conv1.b"], stride=1, pad=2)))
    h = T.maxpool2(T.relu(T.conv2d(h, params["conv2.w"], params["conv2.b"], stride=1, pad=2)))
    h = T.relu(T.affine(h.flatten(), params["fc1.w"], params["fc1.b"]))
    return T.affine(h, params["fc2.w"], params["fc2.b"])


# -- energy network:
#    conv(64,5x5,s2,p4)-swish-conv(128,3x3,s2,p1)-swish-conv(256,3x3,s2,p1)-swish
#    -conv(256,3x3,s2,p1)-swish-flatten-affine(256)-swish-affine(1)
#    The pad-4 first layer effectively works on a 32x32 frame.


def init_energy_net(rng: np.random.Generator, dtype=np.float32) -> dict:
    return {
        "conv1.w": _he(rng, (64, 1, 5, 5), 25, dtype),
        "conv1.b": _zeros((64,), dtype),
        "conv2.w": _he(rng, (128, 64, 3, 3), 64 * 9, dtype),
        "conv2.b": _zeros((128,), dtype),
        "conv3.w": _he(rng, (256, 128, 3, 3), 128 * 9, dtype),
        "conv3.b": _zeros((256,), dtype),
        "conv4.w": _he(rng, (256, 256, 3, 3), 256 * 9, dtype),
        "conv4.b": _zeros((256,), dtype),
        "fc1.w": _he(rng, (256 * 2 * 2, 256), 256 * 2 * 2, dtype),
        "fc1.b": _zeros((256,), dtype),
        "fc2.w": _he(rng, (256, 1), 256, dtype),
        "fc2.b": _zeros((1,), dtype),
    }


def energy_scalars(params: dict, x: Tensor) -> Tensor:
    """One scalar energy per image; (n, 1, 28, 28) -> (n,)."""
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != 28 or x.shape[3] != 28:
        raise T.ShapeError(f"energy net: expected (n, 1, 28, 28) input, got {x.shape}")
    h = T.swish(T.conv2d(x, params["conv1.w"], params["conv1.b"], stride=2, pad=4))  # 16x16
    h = T.swish(T.conv2d(h, params["conv2.w"], params["conv2.b"], stride=2, pad=1))  # 8x8
    h = T.swish(T.conv2d(h, params["conv3.w"], params["conv3.b"], stride=2, pad=1))  # 4x4
    h = T.swish(T.conv2d(h, params["conv4.w"], params["conv4.b"], stride=2, pad=1))  # 2x2
    h = T.swish(T.affine(h.flatten(), params["fc1.w"], params["fc1.b"]))
    out = T.affine(h, params["fc2.w"], params["fc2.b"])
    return out.reshape((x.shape[0],))


def freeze(params: dict) -> dict:
    """A view of the parameters that no longer collects gradients."""
    return {k: v.detach() for k, v in params.items()}


def clone_params(params: dict) -> dict:
    return {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in params.items()}


def global_grad_norm(grads: dict) -> float:
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(sq))


def clip_grads_(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * s
    return norm


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(step=0,
                   m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One Adam update, in place; returns (params, state) for chaining.

    Raises on non-finite gradients, naming the offending parameter.
    """
    for name in params:
        g = np.asarray(grads[name])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter '{name}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.data.dtype)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state

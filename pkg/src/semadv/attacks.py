"""Projected gradient descent attacks under L-inf and L2 budgets."""

from __future__ import annotations

import numpy as np

from . import nets
from . import tensor as T
from .tensor import Tensor

NORMS = ("linf", "l2")


def _per_sample_l2(v: np.ndarray) -> np.ndarray:
    return np.sqrt((v.reshape(v.shape[0], -1) ** 2).sum(axis=1))


def _loss_grad(params, x, labels):
    xt = Tensor(x, requires_grad=True)
    logits = nets.classifier_logits(params, xt)
    loss = T.cross_entropy_with_logits(logits, labels).sum()
    loss.backward()
    return xt.grad


def pgd_attack(params: dict, x: np.ndarray, y, *, norm: str = "linf", eps: float,
               alpha: float, steps: int, targeted: bool = False, y_tar=None,
               forward_grad=None) -> np.ndarray:
    """Iterative FGSM/L2 ascent with projection onto the eps-ball and [0, 1].

    Untargeted mode climbs the cross-entropy at the true label; targeted mode
    descends it at ``y_tar``.  The step starts from x itself (no random
    restart), so an eps or step count of zero returns x exactly.
    """
    if norm not in NORMS:
        raise ValueError(f"unknown norm '{norm}' (one of {NORMS})")
    if eps < 0 or alpha <= 0:
        raise ValueError("eps must be >= 0 and alpha > 0")
    x0 = np.asarray(x, dtype=np.float32)
    n = x0.shape[0]
    labels = np.broadcast_to(np.asarray(y_tar if targeted else y, dtype=np.int64), (n,)).copy()
    sign = -1.0 if targeted else 1.0
    frozen = nets.freeze(params)
    grad_fn = forward_grad or (lambda xx: _loss_grad(frozen, xx, labels))

    xa = x0.copy()
    if eps > 0:
        for _ in range(steps):
            g = grad_fn(xa)
            if norm == "linf":
                step = np.sign(g)
            else:
                norms = _per_sample_l2(g)
                step = g / np.maximum(norms, 1e-12)[:, None, None, None]
            xa = xa + np.float32(sign * alpha) * step.astype(np.float32)
            delta = xa - x0
            if norm == "linf":
                np.clip(delta, -eps, eps, out=delta)
            else:
                norms = _per_sample_l2(delta)
                scale = np.minimum(1.0, eps / np.maximum(norms, 1e-12))
                delta *= scale[:, None, None, None].astype(np.float32)
            xa = np.clip(x0 + delta, 0.0, 1.0)

    _check_budget(xa, x0, norm, eps)
    return xa


def _check_budget(xa, x0, norm, eps, tol=1e-5):
    if xa.min() < 0.0 or xa.max() > 1.0:
        raise RuntimeError("pgd_attack produced values outside [0, 1]")
    delta = xa - x0
    got = np.abs(delta).max() if norm == "linf" else _per_sample_l2(delta).max()
    if got > eps + tol:
        raise RuntimeError(f"pgd_attack exceeded the {norm} budget: {got} > {eps}")

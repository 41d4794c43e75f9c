"""Classifier training (standard and adversarial) and the estimator wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import attacks, nets
from . import tensor as T
from .tensor import Tensor
from .validation import check_images, check_labels


@dataclass(frozen=True)
class TrainConfig:
    """Adam training hyperparameters (defaults follow the reference recipe:
    lr 1e-4, batch 64, 14 epochs)."""

    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 14
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass(frozen=True)
class PgdSettings:
    """Inner-maximization attack used during adversarial training
    (reference values: eps 0.3, alpha 0.036, 10 steps, L-inf).

    ``warmup_frac`` ramps the training-time radius linearly from 0 to eps over
    that fraction of the schedule; short desk-scale schedules need the ramp to
    get traction against the full-strength attack."""

    eps: float = 0.3
    alpha: float = 0.036
    steps: int = 10
    norm: str = "linf"
    warmup_frac: float = 0.0


def fit_classifier(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, *, n_classes: int = 10,
                   adv: PgdSettings | None = None, dtype=np.float32,
                   params: dict | None = None) -> tuple[dict, list[float]]:
    """Minibatch Adam on cross-entropy; with ``adv`` set, each minibatch is
    replaced by its PGD perturbation before the gradient step (the min-max
    recipe).  An eps of zero short-circuits to standard training, leaving the
    loss trajectory bit-identical to it.

    Returns the trained parameters and the per-step loss history.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = nets.init_classifier(rng, n_classes=n_classes, dtype=dtype)
    state = nets.AdamState.for_params(params)
    attack = adv if adv is not None and adv.eps > 0 else None
    losses: list[float] = []
    n = X.shape[0]
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    warmup = int(attack.warmup_frac * total_steps) if attack is not None else 0
    step_no = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = X[idx].astype(dtype, copy=False)
            yb = y[idx]
            if attack is not None:
                eps = attack.eps * min(1.0, (step_no + 1) / warmup) if warmup else attack.eps
                xb = attacks.pgd_attack(params, xb, yb, norm=attack.norm, eps=eps,
                                        alpha=attack.alpha, steps=attack.steps)
            step_no += 1
            logits = nets.classifier_logits(params, Tensor(xb))
            loss = T.cross_entropy_with_logits(logits, yb).mean()
            loss.backward()
            grads = {k: p.grad for k, p in params.items()}
            for p in params.values():
                p.zero_grad()
            nets.adam_step(params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2)
            losses.append(loss.item())
    return params, losses


def predict_logits(params: dict, X: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Frozen-parameter forward pass in memory-bounded chunks."""
    frozen = nets.freeze(params)
    dtype = next(iter(frozen.values())).dtype
    outs = []
    for lo in range(0, X.shape[0], chunk):
        xb = Tensor(X[lo:lo + chunk].astype(dtype, copy=False))
        outs.append(nets.classifier_logits(frozen, xb).data)
    return np.concatenate(outs, axis=0)


def accuracy(params: dict, X: np.ndarray, y: np.ndarray) -> float:
    return float((predict_logits(params, X).argmax(axis=1) == y).mean())


def robust_accuracy(params: dict, X: np.ndarray, y: np.ndarray, pgd: PgdSettings) -> float:
    xa = attacks.pgd_attack(params, X, y, norm=pgd.norm, eps=pgd.eps,
                            alpha=pgd.alpha, steps=pgd.steps)
    return accuracy(params, xa, y)


class CNNClassifier(BaseEstimator, ClassifierMixin):
    """Small convolutional classifier with optional adversarial training.

    Set ``adv_eps > 0`` to train on PGD-perturbed minibatches.  Follows the
    usual estimator protocol: hyperparameters in the constructor, learned
    state on ``fit`` in trailing-underscore attributes.
    """

    def __init__(self, learning_rate=1e-4, batch_size=64, epochs=14, n_classes=10,
                 adv_eps=0.0, adv_alpha=0.036, adv_steps=10, adv_norm="linf",
                 random_state=0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.n_classes = n_classes
        self.adv_eps = adv_eps
        self.adv_alpha = adv_alpha
        self.adv_steps = adv_steps
        self.adv_norm = adv_norm
        self.random_state = random_state

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, self.n_classes)
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                          epochs=self.epochs, seed=self.random_state)
        adv = PgdSettings(eps=self.adv_eps, alpha=self.adv_alpha, steps=self.adv_steps,
                          norm=self.adv_norm) if self.adv_eps > 0 else None
        self.params_, self.loss_history_ = fit_classifier(
            X, y, cfg, n_classes=self.n_classes, adv=adv)
        self.classes_ = np.arange(self.n_classes)
        return self

    def decision_function(self, X):
        self._require_fitted()
        return predict_logits(self.params_, check_images(X))

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("this CNNClassifier instance is not fitted yet")

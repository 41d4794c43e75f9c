"""Langevin Monte Carlo over differentiable energies.

``lmc`` iterates  x_{t+1} = x_t - (eps^2/2) grad(x_t) + eps z_t  with standard
normal z_t, whose stationary law is the Gibbs density  exp(-energy) ; ``psgla``
applies a coordinatewise clamp to the box after every step so all states stay
feasible.  No Metropolis correction is applied; the O(eps^2) bias is accepted
and measured by the analytic test suite.

Energies follow a small contract (value / grad / value_and_grad over a whole
state array).  ``AdversarialEnergy`` composes a distance expert around the
original image with a victim-classifier objective:

    total(x) = c1 * D(x_ori, x) + c2 * f(logits(x), y_tar)

which is the negative log-density of the product of the two experts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nets
from . import tensor as T
from .tensor import Tensor


class SamplerError(RuntimeError):
    pass


class EnergyFn:
    """Scalar energy of a state array plus its gradient.

    For batched states the value is the sum over the leading axis (samples are
    independent, so the gradient stays per-sample); ``per_sample`` exposes the
    individual energies where a subclass supports it.
    """

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def per_sample(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class SamplerConfig:
    """Step size, chain length, initialization law, box bounds and seed."""

    step_size: float
    n_steps: int
    init: str = "fixed"            # "fixed" (use x0) or "uniform" (draw in box)
    seed: Optional[int] = 0
    box: Optional[tuple[float, float]] = None
    per_chain_rng: bool = False    # leading axis of the state = independent chains
    keep_every: int = 0            # record every k-th state (0: final state only)

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.init not in ("fixed", "uniform"):
            raise ValueError(f"unknown init law '{self.init}'")
        if self.box is not None and not self.box[0] < self.box[1]:
            raise ValueError("box must be (lo, hi) with lo < hi")


@dataclass
class SamplerResult:
    final: np.ndarray
    states: Optional[np.ndarray] = None  # (k, *state_shape) thinned history


def _spawn_generators(seed, n: int, offset: int = 0) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(offset + n)[offset:]
    return [np.random.default_rng(s) for s in children]


def _run(energy: EnergyFn, cfg: SamplerConfig, x0, shape, box, seed_offset: int = 0) -> SamplerResult:
    if cfg.init == "uniform":
        if shape is None:
            if x0 is None:
                raise ValueError("uniform init needs a state shape or template x0")
            shape = np.asarray(x0).shape
        lo, hi = box if box is not None else (0.0, 1.0)
    elif x0 is None:
        raise ValueError("fixed init needs x0")

    dtype = np.asarray(x0).dtype if x0 is not None else np.float32
    if dtype not in (np.float32, np.float64):
        dtype = np.float32

    if cfg.per_chain_rng:
        n_chains = (shape if x0 is None else np.asarray(x0).shape)[0]
        gens = _spawn_generators(cfg.seed, n_chains, seed_offset)

        def draw(sub_shape):
            return np.stack([g.standard_normal(sub_shape[1:], dtype=dtype) for g in gens])

        def uniform(sub_shape):
            return np.stack([g.uniform(lo, hi, size=sub_shape[1:]).astype(dtype) for g in gens])
    else:
        gen = np.random.default_rng(cfg.seed)

        def draw(sub_shape):
            return gen.standard_normal(sub_shape, dtype=dtype)

        def uniform(sub_shape):
            return gen.uniform(lo, hi, size=sub_shape).astype(dtype)

    x = uniform(tuple(shape)) if cfg.init == "uniform" else np.array(x0, dtype=dtype, copy=True)
    if box is not None:
        np.clip(x, box[0], box[1], out=x)

    eps = np.dtype(dtype).type(cfg.step_size)
    half = np.dtype(dtype).type(0.5 * cfg.step_size ** 2)

    kept = []
    for t in range(cfg.n_steps):
        val, g = energy.value_and_grad(x)
        if not np.isfinite(val):
            raise SamplerError(f"non-finite energy at step {t}")
        if not np.all(np.isfinite(g)):
            raise SamplerError(f"non-finite gradient at step {t}")
        x = x - half * g + eps * draw(x.shape)
        if box is not None:
            np.clip(x, box[0], box[1], out=x)
        if cfg.keep_every and (t + 1) % cfg.keep_every == 0:
            kept.append(x.copy())

    return SamplerResult(final=x, states=np.stack(kept) if kept else None)


def lmc(energy: EnergyFn, cfg: SamplerConfig, x0=None, shape=None,
        seed_offset: int = 0) -> SamplerResult:
    """Unconstrained Langevin chain; rejects configs with a box set."""
    if cfg.box is not None:
        raise ValueError("lmc: projection must be disabled (use psgla for box constraints)")
    return _run(energy, cfg, x0, shape, None, seed_offset)


def psgla(energy: EnergyFn, cfg: SamplerConfig, x0=None, shape=None,
          seed_offset: int = 0) -> SamplerResult:
    """Projected Langevin chain: every state is clamped into the box."""
    box = cfg.box if cfg.box is not None else (0.0, 1.0)
    return _run(energy, cfg, x0, shape, box, seed_offset)


# -- victim objectives --------------------------------------------------------


def _check_label(logits: Tensor, y_tar: int) -> int:
    k = logits.shape[1]
    y = int(y_tar)
    if not 0 <= y < k:
        raise ValueError(f"target label {y} out of range [0, {k})")
    return y


def _take_column(logits: Tensor, y: int) -> Tensor:
    onehot = np.zeros((logits.shape[1], 1), dtype=logits.data.dtype)
    onehot[y, 0] = 1.0
    return T.matmul(logits, Tensor(onehot)).reshape((logits.shape[0],))


def f_ce(logits: Tensor, y_tar: int) -> Tensor:
    """Cross-entropy at the target label, per sample."""
    y = _check_label(logits, y_tar)
    labels = np.full(logits.shape[0], y, dtype=np.int64)
    return T.cross_entropy_with_logits(logits, labels)


def f_cw(logits: Tensor, y_tar: int) -> Tensor:
    """max(max_{y != y_tar} logits[y] - logits[y_tar], 0), per sample."""
    y = _check_label(logits, y_tar)
    mask = np.zeros((1, logits.shape[1]), dtype=logits.data.dtype)
    mask[0, y] = -1e9  # exclude the target column from the max
    others, _ = T.tmax(logits + Tensor(mask), axis=1)
    return T.relu(others - _take_column(logits, y))


def f_pe(logits: Tensor, y_tar: int, c_pe: float) -> Tensor:
    """Predictive-entropy weighted objective: -c_pe * sum sigma log sigma + f_ce."""
    if c_pe < 0:
        raise ValueError("c_pe must be >= 0")
    base = f_ce(logits, y_tar)
    if c_pe == 0:
        return base
    s = T.softmax(logits, axis=1)
    logp = logits - T.logsumexp(logits, axis=1).reshape((logits.shape[0], 1))
    ent = T.tsum(s * logp, axis=1)  # = -H
    return T.scale(ent, -c_pe) + base


def f_je(logits: Tensor, y_tar: int, c_je: float) -> Tensor:
    """Joint-energy objective: -logits[y_tar] + c_je * logsumexp(logits)."""
    if c_je < 0:
        raise ValueError("c_je must be >= 0")
    y = _check_label(logits, y_tar)
    out = T.scale(_take_column(logits, y), -1.0)
    if c_je == 0:
        return out
    return out + T.scale(T.logsumexp(logits, axis=1), c_je)


OBJECTIVES = ("ce", "cw", "pe", "je")
DISTANCES = ("l2sq", "semantic")


@dataclass
class AdvEnergySpec:
    """Weights and ingredients of the product-of-experts adversarial energy."""

    c1: float
    c2: float
    distance: str                     # "l2sq" or "semantic"
    objective: str                    # "ce", "cw", "pe" or "je"
    x_ori: np.ndarray
    y_tar: int
    victim_params: dict = field(default_factory=dict)
    ebm_params: Optional[dict] = None
    c_pe: float = 1.0
    c_je: float = 1.0

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("c1 and c2 must be >= 0")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance kind '{self.distance}' (one of {DISTANCES})")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective kind '{self.objective}' (one of {OBJECTIVES})")
        if self.distance == "semantic" and self.c1 > 0 and self.ebm_params is None:
            raise ValueError("semantic distance requires trained energy-model parameters")


@dataclass
class EnergyComponents:
    """Per-sample pieces of the last evaluated batch."""

    total: np.ndarray
    distance: np.ndarray
    objective: np.ndarray
    logits: Optional[np.ndarray]


class AdversarialEnergy(EnergyFn):
    """c1 * D(x_ori, x) + c2 * f(logits(x), y_tar) with exact input gradients."""

    def __init__(self, spec: AdvEnergySpec):
        self.spec = spec
        self._victim = nets.freeze(spec.victim_params) if spec.victim_params else {}
        self._ebm = nets.freeze(spec.ebm_params) if spec.ebm_params else None
        x0 = np.asarray(spec.x_ori)
        if x0.ndim == 3:
            x0 = x0[None]
        self._x_ori = x0
        self.last: Optional[EnergyComponents] = None

    def _objective(self, logits: Tensor) -> Tensor:
        s = self.spec
        if s.objective == "ce":
            return f_ce(logits, s.y_tar)
        if s.objective == "cw":
            return f_cw(logits, s.y_tar)
        if s.objective == "pe":
            return f_pe(logits, s.y_tar, s.c_pe)
        return f_je(logits, s.y_tar, s.c_je)

    def _build(self, x: np.ndarray, requires_grad: bool):
        s = self.spec
        xt = Tensor(x, requires_grad=requires_grad)
        b = x.shape[0]
        zero = Tensor(np.zeros(b, dtype=x.dtype))

        if s.c1 > 0:
            if s.distance == "l2sq":
                ref = Tensor(self._x_ori.astype(x.dtype, copy=False))
                diff = xt - ref
                dist = T.tsum((diff * diff).reshape(b, -1), axis=1)
            else:
                dist = nets.energy_scalars(self._ebm, xt)
        else:
            dist = zero

        logits = None
        if s.c2 > 0:
            logits = nets.classifier_logits(self._victim, xt)
            obj = self._objective(logits)
        else:
            obj = zero

        per = T.scale(dist, s.c1) + T.scale(obj, s.c2)
        return xt, per, dist, obj, logits

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        xt, per, dist, obj, logits = self._build(np.asarray(x), True)
        total = per.sum()
        total.backward()
        self.last = EnergyComponents(
            total=per.data.copy(), distance=dist.data.copy(), objective=obj.data.copy(),
            logits=None if logits is None else logits.data.copy())
        grad = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
        return total.item(), grad

    def value(self, x: np.ndarray) -> float:
        return float(self.per_sample(np.asarray(x)).sum())

    def per_sample(self, x: np.ndarray) -> np.ndarray:
        _, per, dist, obj, logits = self._build(np.asarray(x), False)
        self.last = EnergyComponents(
            total=per.data.copy(), distance=dist.data.copy(), objective=obj.data.copy(),
            logits=None if logits is None else logits.data.copy())
        return per.data


def adv_energy(spec: AdvEnergySpec) -> AdversarialEnergy:
    return AdversarialEnergy(spec)

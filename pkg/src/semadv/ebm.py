"""Single-image energy-based model trained by contrastive divergence.

The model's positives are an endless stream of semantics-preserving
augmentations of one original image; negatives come from short projected
Langevin chains initialized from a persistent replay buffer (a fraction of
chains restarts from uniform noise each draw).  The parameter gradient is

    mean d/dtheta E(pos) - mean d/dtheta E(neg)
    + alpha_reg * d/dtheta (mean E(pos)^2 + mean E(neg)^2)

where the quadratic term keeps energies bounded.  Gradients are clipped to a
global-norm cap before the Adam step; runs abort with diagnostics if the
energies diverge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import nets, samplers
from . import tensor as T
from .augment import TransformFamily, augment
from .tensor import Tensor
from .validation import check_images


class EBMDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EbmTrainConfig:
    """Desk-scale contrastive-divergence schedule.

    The reference recipe for the energy net is Adam at 1e-4 with batch 128
    over 200 epochs; a single-image model separates long before that, so the
    defaults run a few hundred buffered short-chain steps instead.
    """

    steps: int = 700
    batch_size: int = 16
    lmc_steps: int = 30
    lmc_step_size: float = 0.1
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    alpha_reg: float = 0.1
    buffer_capacity: int = 10_000
    reinit_prob: float = 0.05
    clip_norm: float = 100.0
    divergence_limit: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.lmc_steps) < 0 or self.batch_size < 1:
            raise ValueError("counts must be positive")
        if self.alpha_reg < 0:
            raise ValueError("alpha_reg must be >= 0")
        if not 0.0 <= self.reinit_prob <= 1.0:
            raise ValueError("reinit_prob must lie in [0, 1]")


class NetEnergy(samplers.EnergyFn):
    """EnergyFn view of a (frozen) energy network."""

    def __init__(self, params: dict):
        self._params = nets.freeze(params)
        self._dtype = next(iter(self._params.values())).dtype

    def value_and_grad(self, x):
        xt = Tensor(np.asarray(x, dtype=self._dtype), requires_grad=True)
        total = nets.energy_scalars(self._params, xt).sum()
        total.backward()
        return total.item(), xt.grad

    def per_sample(self, x):
        xt = Tensor(np.asarray(x, dtype=self._dtype))
        return nets.energy_scalars(self._params, xt).data


def energy_values(params: dict, x: np.ndarray) -> np.ndarray:
    """Energies of a batch under frozen parameters."""
    return NetEnergy(params).per_sample(x)


class ReplayBuffer:
    """Ring buffer of past negative samples, all inside [0, 1]."""

    def __init__(self, capacity: int, shape: tuple, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.shape = tuple(shape)
        self.rng = rng
        self._store = np.empty((capacity,) + self.shape, dtype=np.float32)
        self.size = 0
        self._cursor = 0

    def sample_inits(self, n: int, reinit_prob: float) -> np.ndarray:
        """Past negatives, each independently replaced by fresh uniform noise
        with probability ``reinit_prob`` (always fresh while empty)."""
        fresh = self.rng.random((n,) + self.shape, dtype=np.float32)
        if self.size == 0:
            return fresh
        idx = self.rng.integers(0, self.size, size=n)
        out = self._store[idx].copy()
        mask = self.rng.random(n) < reinit_prob
        out[mask] = fresh[mask]
        return out

    def push(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float32)
        if batch.min() < 0.0 or batch.max() > 1.0:
            raise ValueError("replay buffer only stores samples inside [0, 1]")
        for img in batch:
            self._store[self._cursor] = img
            self._cursor = (self._cursor + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)


def cd_gradient(params: dict, pos: np.ndarray, neg: np.ndarray,
                alpha_reg: float = 0.0) -> tuple[dict, float, float]:
    """Contrastive gradient (positive phase minus negative phase, plus the
    energy-magnitude regularizer).  Returns (grads, mean pos E, mean neg E)."""
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("cd_gradient needs non-empty batches")
    dtype = next(iter(params.values())).dtype
    e_pos = nets.energy_scalars(params, Tensor(np.asarray(pos, dtype=dtype)))
    e_neg = nets.energy_scalars(params, Tensor(np.asarray(neg, dtype=dtype)))
    if not (np.all(np.isfinite(e_pos.data)) and np.all(np.isfinite(e_neg.data))):
        raise FloatingPointError("cd_gradient: non-finite energies")
    loss = e_pos.mean() - e_neg.mean()
    if alpha_reg > 0:
        loss = loss + T.scale((e_pos * e_pos).mean() + (e_neg * e_neg).mean(), alpha_reg)
    loss.backward()
    grads = {}
    for k, p in params.items():
        grads[k] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.zero_grad()
    return grads, float(e_pos.data.mean()), float(e_neg.data.mean())


def draw_negatives(params: dict, buffer: ReplayBuffer, n: int, cfg: EbmTrainConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Evolve buffer-initialized chains against the current energy and push
    the outcomes back into the buffer."""
    inits = buffer.sample_inits(n, cfg.reinit_prob)
    scfg = samplers.SamplerConfig(step_size=cfg.lmc_step_size, n_steps=cfg.lmc_steps,
                                  seed=int(rng.integers(2 ** 62)), box=(0.0, 1.0))
    res = samplers.psgla(NetEnergy(params), scfg, x0=inits)
    buffer.push(res.final)
    return res.final


def train_single_image_ebm(x_ori: np.ndarray, family: TransformFamily,
                           cfg: EbmTrainConfig, callback=None) -> tuple[dict, list]:
    """Fit E(.; x_ori) on fresh augmentation draws; returns (params, history)
    with one (step, mean pos energy, mean neg energy) row per step."""
    x_ori = check_images(x_ori)[0]
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, aug_rng, buf_rng, chain_rng = (np.random.default_rng(s) for s in seeds)
    params = nets.init_energy_net(init_rng)
    state = nets.AdamState.for_params(params)
    buffer = ReplayBuffer(cfg.buffer_capacity, x_ori.shape, buf_rng)
    history = []
    for step in range(cfg.steps):
        pos = augment(x_ori, cfg.batch_size, family, aug_rng).astype(np.float32)
        neg = draw_negatives(params, buffer, cfg.batch_size, cfg, chain_rng)
        grads, pos_e, neg_e = cd_gradient(params, pos, neg, cfg.alpha_reg)
        if max(abs(pos_e), abs(neg_e)) > cfg.divergence_limit:
            raise EBMDivergenceError(
                f"energy diverged at step {step}: mean pos {pos_e:.3g}, mean neg {neg_e:.3g}")
        nets.clip_grads_(grads, cfg.clip_norm)
        nets.adam_step(params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2)
        history.append((step, pos_e, neg_e))
        if callback is not None:
            callback(step, pos_e, neg_e)
    return params, history


class SingleImageEnergyModel(BaseEstimator):
    """Estimator facade: fit on one image, score arbitrary batches.

    ``score_samples`` returns the unnormalized log-density (minus the energy),
    mirroring the density-estimator convention.
    """

    def __init__(self, steps=700, batch_size=16, lmc_steps=30, lmc_step_size=0.1,
                 learning_rate=1e-4, alpha_reg=0.1, buffer_capacity=10_000,
                 reinit_prob=0.05, clip_norm=100.0, tps_sigma=2.0, random_state=0):
        self.steps = steps
        self.batch_size = batch_size
        self.lmc_steps = lmc_steps
        self.lmc_step_size = lmc_step_size
        self.learning_rate = learning_rate
        self.alpha_reg = alpha_reg
        self.buffer_capacity = buffer_capacity
        self.reinit_prob = reinit_prob
        self.clip_norm = clip_norm
        self.tps_sigma = tps_sigma
        self.random_state = random_state

    def _config(self) -> EbmTrainConfig:
        return EbmTrainConfig(steps=self.steps, batch_size=self.batch_size,
                              lmc_steps=self.lmc_steps, lmc_step_size=self.lmc_step_size,
                              learning_rate=self.learning_rate, alpha_reg=self.alpha_reg,
                              buffer_capacity=self.buffer_capacity,
                              reinit_prob=self.reinit_prob, clip_norm=self.clip_norm,
                              seed=self.random_state)

    def fit(self, X, y=None):
        family = TransformFamily.mnist(tps_sigma=self.tps_sigma)
        self.params_, self.history_ = train_single_image_ebm(X, family, self._config())
        return self

    def energy(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise RuntimeError("this SingleImageEnergyModel instance is not fitted yet")
        return energy_values(self.params_, check_images(X))

    def score_samples(self, X) -> np.ndarray:
        return -self.energy(X)

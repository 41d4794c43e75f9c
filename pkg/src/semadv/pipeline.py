"""Attack pipeline: sample, reject, refine, score.

One attack on (x_ori, y_tar) draws M independent projected-Langevin chains
from the adversarial distribution, keeps the final states that already
deceive the victim (rejection step), ranks survivors by the auxiliary
classifier's softmax at the original label, keeps the top kappa fraction, and
returns the N lowest-energy samples of those (ascending).  The grid runner
repeats this over every (source, target) pair and scores the refined samples
with a surrogate annotator classifier.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import samplers
from .classifiers import predict_logits
from .samplers import AdvEnergySpec, AdversarialEnergy, SamplerConfig
from .validation import check_images


@dataclass(frozen=True)
class AttackConfig:
    """Sampling/refinement constants; the reference protocol draws M=2000,
    keeps N=100 after refinement with kappa=0.10, and weights the experts
    c1=1.0, c2=1e-2."""

    m_samples: int = 2000
    n_final: int = 100
    kappa: float = 0.10
    c1: float = 1.0
    c2: float = 0.01
    distance: str = "semantic"
    objective: str = "cw"
    c_pe: float = 1.0
    c_je: float = 1.0
    step_size: float = 0.05
    n_steps: int = 200
    seed: int = 0
    chunk: int = 250
    n_threads: int = 1

    def __post_init__(self):
        if self.n_final > self.m_samples:
            raise ValueError("n_final must not exceed m_samples")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must lie in (0, 1]")


@dataclass
class AttackModels:
    """Trained parameter sets an attack runs against."""

    victim: dict
    aux: dict
    ebm: Optional[dict] = None


@dataclass
class SampleRecord:
    """One candidate adversarial image and the scores Algorithm 1 filters on."""

    image: np.ndarray
    victim_logits: np.ndarray
    deceives: bool
    energy: float
    aux_score: float


@dataclass
class RejectionResult:
    records: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def accepted(self) -> int:
        return len(self.records)


def _victim_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _chain_energy(models: AttackModels, cfg: AttackConfig, x_ori, y_tar) -> AdversarialEnergy:
    spec = AdvEnergySpec(c1=cfg.c1, c2=cfg.c2, distance=cfg.distance,
                         objective=cfg.objective, x_ori=x_ori, y_tar=y_tar,
                         victim_params=models.victim, ebm_params=models.ebm,
                         c_pe=cfg.c_pe, c_je=cfg.c_je)
    return AdversarialEnergy(spec)


def rejection_sample(x_ori: np.ndarray, y_ori: int, y_tar: int, models: AttackModels,
                     cfg: AttackConfig) -> RejectionResult:
    """Run M chains against the adversarial energy; keep deceiving finals.

    Zero acceptances is a regular outcome: the result carries diagnostics
    (acceptance rate, mean final objective) instead of raising.
    """
    x_ori = check_images(x_ori)[0]
    shape = x_ori.shape

    def run_chunk(start: int, count: int):
        energy = _chain_energy(models, cfg, x_ori, y_tar)
        scfg = SamplerConfig(step_size=cfg.step_size, n_steps=cfg.n_steps, init="uniform",
                             seed=cfg.seed, box=(0.0, 1.0), per_chain_rng=True)
        res = samplers.psgla(energy, scfg, shape=(count,) + shape, seed_offset=start)
        finals = res.final
        energy.per_sample(finals)
        comp = energy.last
        logits = comp.logits if comp.logits is not None else predict_logits(models.victim, finals)
        return finals, logits, comp.distance.copy(), comp.objective.copy()

    chunks = []
    starts = list(range(0, cfg.m_samples, cfg.chunk))
    sizes = [min(cfg.chunk, cfg.m_samples - s) for s in starts]
    if cfg.n_threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
            chunks = list(pool.map(run_chunk, starts, sizes))
    else:
        chunks = [run_chunk(s, c) for s, c in zip(starts, sizes)]

    finals = np.concatenate([c[0] for c in chunks])
    logits = np.concatenate([c[1] for c in chunks])
    dist = np.concatenate([c[2] for c in chunks])
    obj = np.concatenate([c[3] for c in chunks])

    pred = logits.argmax(axis=1)
    deceives = pred == y_tar
    aux_logits = predict_logits(models.aux, finals[deceives]) if deceives.any() else \
        np.empty((0, logits.shape[1]))
    aux_scores = _victim_softmax(aux_logits)[:, y_ori] if aux_logits.size else np.empty(0)

    records = []
    for img, lg, en, sc in zip(finals[deceives], logits[deceives], dist[deceives], aux_scores):
        records.append(SampleRecord(image=img, victim_logits=lg, deceives=True,
                                    energy=float(en), aux_score=float(sc)))
    diagnostics = {
        "n_chains": cfg.m_samples,
        "n_accepted": int(deceives.sum()),
        "acceptance_rate": float(deceives.mean()),
        "mean_final_objective": float(obj.mean()),
        "mean_final_distance": float(dist.mean()),
        "mean_victim_target_softmax": float(_victim_softmax(logits)[:, y_tar].mean()),
    }
    return RejectionResult(records=records, diagnostics=diagnostics)


def refine(records: list, kappa: float, n_final: int) -> list:
    """Top-kappa by auxiliary softmax (descending), then the n_final lowest
    energies of those, returned in ascending energy order."""
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must lie in (0, 1]")
    if not records:
        return []
    by_aux = sorted(records, key=lambda r: -r.aux_score)
    keep = max(1, math.floor(kappa * len(by_aux)))
    shortlist = sorted(by_aux[:keep], key=lambda r: r.energy)
    return shortlist[:min(n_final, len(shortlist))]


def surrogate_success_rate(records: list, y_ori: int, surrogate: dict) -> float:
    """Fraction of records the surrogate annotator still reads as y_ori."""
    if not records:
        raise ValueError("surrogate_success_rate needs at least one record")
    images = np.stack([r.image for r in records])
    pred = predict_logits(surrogate, images).argmax(axis=1)
    return float((pred == y_ori).mean())


@dataclass
class AttackReport:
    y_ori: int
    y_tar: int
    refined: list
    diagnostics: dict

    def summary(self) -> dict:
        out = {"y_ori": self.y_ori, "y_tar": self.y_tar, "n_refined": len(self.refined)}
        out.update(self.diagnostics)
        if self.refined:
            probs = [float(_victim_softmax(r.victim_logits[None])[0, self.y_tar])
                     for r in self.refined]
            out["refined_mean_victim_target_softmax"] = float(np.mean(probs))
            out["refined_mean_energy"] = float(np.mean([r.energy for r in self.refined]))
        return out


def run_attack(x_ori: np.ndarray, y_ori: int, y_tar: int, models: AttackModels,
               cfg: AttackConfig,
               ebm_trainer: Optional[Callable[[np.ndarray], dict]] = None) -> AttackReport:
    """Rejection sampling plus refinement for one (source, target) pair.

    With a semantic distance and no trained energy model attached, the
    ``ebm_trainer`` callback supplies one (train-or-load composition).
    """
    if y_tar == y_ori:
        raise ValueError("target class must differ from the original class")
    if cfg.distance == "semantic" and models.ebm is None:
        if ebm_trainer is None:
            raise ValueError("semantic distance needs a trained energy model or an ebm_trainer")
        models = AttackModels(victim=models.victim, aux=models.aux,
                              ebm=ebm_trainer(x_ori))
    rej = rejection_sample(x_ori, y_ori, y_tar, models, cfg)
    refined = refine(rej.records, cfg.kappa, cfg.n_final)
    for r in refined:
        assert r.deceives  # rejection already enforced this; refinement must preserve it
    return AttackReport(y_ori=y_ori, y_tar=y_tar, refined=refined,
                        diagnostics=rej.diagnostics)


def attack_grid(sources: np.ndarray, y_oris: np.ndarray, targets: list, models: AttackModels,
                cfg: AttackConfig, surrogate: dict,
                ebm_trainer: Optional[Callable[[np.ndarray], dict]] = None,
                ebm_cache: Optional[dict] = None,
                pair_callback=None) -> tuple[np.ndarray, list]:
    """Success-rate matrix over sources x targets.

    Cell (i, j) is the surrogate success rate of the refined samples for
    source i attacked toward target j; the source's own class is NaN, and
    no-acceptance pairs count as 0.  One energy model is trained (or pulled
    from ``ebm_cache``) per source and reused across its targets.
    """
    sources = check_images(sources)
    rates = np.full((len(sources), len(targets)), np.nan)
    reports = []
    for i, (x_ori, y_ori) in enumerate(zip(sources, y_oris)):
        ebm = None
        if cfg.distance == "semantic":
            key = i if ebm_cache is None else int(y_ori)
            if ebm_cache is not None and key in ebm_cache:
                ebm = ebm_cache[key]
            else:
                if ebm_trainer is None:
                    raise ValueError("semantic distance needs an ebm_trainer for the grid")
                ebm = ebm_trainer(x_ori)
                if ebm_cache is not None:
                    ebm_cache[key] = ebm
        pair_models = AttackModels(victim=models.victim, aux=models.aux, ebm=ebm)
        for j, y_tar in enumerate(targets):
            if int(y_tar) == int(y_ori):
                continue
            report = run_attack(x_ori, int(y_ori), int(y_tar), pair_models, cfg)
            rate = surrogate_success_rate(report.refined, int(y_ori), surrogate) \
                if report.refined else 0.0
            rates[i, j] = rate
            reports.append((int(y_ori), int(y_tar), rate, report))
            if pair_callback is not None:
                pair_callback(i, int(y_ori), int(y_tar), rate, report)
    return rates, reports


# -- PGD baseline ---------------------------------------------------------------


def pgd_baseline_grid(victim: dict, sources: np.ndarray, y_oris: np.ndarray,
                      targets: list, *, norm: str, eps: float, alpha: float,
                      steps: int) -> dict:
    """Targeted PGD on every (source, target) pair; reference settings are
    100 steps with alpha 0.04 (L-inf) or 0.2 (L2)."""
    from .attacks import pgd_attack

    sources = check_images(sources)
    images, flags, pairs = [], [], []
    for x_ori, y_ori in zip(sources, y_oris):
        for y_tar in targets:
            if int(y_tar) == int(y_ori):
                continue
            xa = pgd_attack(victim, x_ori[None], np.array([int(y_ori)]), norm=norm, eps=eps,
                            alpha=alpha, steps=steps, targeted=True, y_tar=int(y_tar))
            pred = int(predict_logits(victim, xa).argmax(axis=1)[0])
            images.append(xa[0])
            flags.append(pred == int(y_tar))
            pairs.append((int(y_ori), int(y_tar)))
    return {"images": np.stack(images), "deceives": np.array(flags), "pairs": pairs}

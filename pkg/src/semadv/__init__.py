"""Semantics-aware adversarial examples via box-constrained Langevin sampling.

The attack samples a product of two experts: a victim term concentrating
where the classifier outputs the target class, and a distance term around the
original image (squared L2, or the energy of a model trained only on
semantics-preserving transforms of that image).  Rejection sampling and
energy-based refinement turn raw chains into the final adversarial set.
"""

from .augment import TransformFamily, TransformSpec, augment, sample_transform
from .classifiers import CNNClassifier, PgdSettings, TrainConfig, fit_classifier
from .ebm import (EbmTrainConfig, ReplayBuffer, SingleImageEnergyModel,
                  train_single_image_ebm)
from .pipeline import (AttackConfig, AttackModels, AttackReport, SampleRecord,
                       attack_grid, refine, rejection_sample, run_attack,
                       surrogate_success_rate)
from .samplers import (AdvEnergySpec, AdversarialEnergy, EnergyFn, SamplerConfig,
                       adv_energy, f_ce, f_cw, f_je, f_pe, lmc, psgla)
from .tensor import Tensor
from .tps import TPSParams, control_lattice, tps_apply, tps_fit, warp_image

__version__ = "0.1.0"

__all__ = [
    "AdvEnergySpec", "AdversarialEnergy", "AttackConfig", "AttackModels",
    "AttackReport", "CNNClassifier", "EbmTrainConfig", "EnergyFn", "PgdSettings",
    "ReplayBuffer", "SampleRecord", "SamplerConfig", "SingleImageEnergyModel",
    "TPSParams", "Tensor", "TrainConfig", "TransformFamily", "TransformSpec",
    "adv_energy", "attack_grid", "augment", "control_lattice", "f_ce", "f_cw",
    "f_je", "f_pe", "fit_classifier", "lmc", "psgla", "refine",
    "rejection_sample", "run_attack", "sample_transform", "surrogate_success_rate",
    "tps_apply", "tps_fit", "train_single_image_ebm", "warp_image",
]

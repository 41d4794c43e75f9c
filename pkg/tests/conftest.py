"""Shared fixtures: the digit corpus and cached trained models.

Training fixtures are expensive (minutes), so they are cached on disk under
tests/_artifacts keyed by a version tag; delete the directory to retrain.
"""

from pathlib import Path

import numpy as np
import pytest

import semadv.dataio as dataio
import semadv.nets as nets
import semadv.tensor

semadv.tensor.set_finite_checks(True)

ARTIFACTS = Path(__file__).parent / "_artifacts"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def digits():
    from semadv.data import digits_dataset, train_test_split

    X, y = digits_dataset()
    return train_test_split(X, y, test_fraction=0.2, seed=0)


def cached_params(name, template_fn, builder):
    path = ARTIFACTS / f"{name}.ckpt"
    if path.exists():
        try:
            return dataio.load_params(path, template_fn())
        except Exception:
            path.unlink()
    params = builder()
    ARTIFACTS.mkdir(exist_ok=True)
    dataio.save_checkpoint(path, params)
    return params


def _classifier_template():
    return nets.init_classifier(np.random.default_rng(0))


def _energy_template():
    return nets.init_energy_net(np.random.default_rng(0))


@pytest.fixture(scope="session")
def std_victim(digits):
    from semadv.classifiers import TrainConfig, fit_classifier

    Xtr, ytr, _, _ = digits

    def build():
        params, _ = fit_classifier(
            Xtr, ytr, TrainConfig(learning_rate=1e-3, batch_size=32, epochs=3, seed=0))
        return params

    return cached_params("std-victim-v1", _classifier_template, build)


@pytest.fixture(scope="session")
def robust_victim(digits):
    from semadv.classifiers import PgdSettings, TrainConfig, fit_classifier

    Xtr, ytr, _, _ = digits

    def build():
        params, _ = fit_classifier(
            Xtr, ytr, TrainConfig(learning_rate=1e-3, batch_size=64, epochs=10, seed=0),
            adv=PgdSettings(eps=0.3, alpha=0.036, steps=10, warmup_frac=0.3))
        return params

    return cached_params("robust-victim-v1", _classifier_template, build)


def _augmented_classifier(digits, seed):
    from semadv.augment import TransformFamily
    from semadv.classifiers import TrainConfig, fit_classifier
    from semadv.data import augmented_training_set

    Xtr, ytr, _, _ = digits
    Xa, ya = augmented_training_set(Xtr, ytr, TransformFamily.mnist(), copies=1, seed=seed)
    params, _ = fit_classifier(
        Xa, ya, TrainConfig(learning_rate=1e-3, batch_size=32, epochs=2, seed=seed))
    return params


@pytest.fixture(scope="session")
def aux_classifier(digits):
    return cached_params("aux-v1", _classifier_template,
                         lambda: _augmented_classifier(digits, seed=11))


@pytest.fixture(scope="session")
def surrogate_classifier(digits):
    return cached_params("surrogate-v1", _classifier_template,
                         lambda: _augmented_classifier(digits, seed=23))


@pytest.fixture(scope="session")
def source_exemplars(digits):
    from semadv.data import class_exemplars

    _, _, Xte, yte = digits
    return class_exemplars(Xte, yte, seed=0)


@pytest.fixture(scope="session")
def ebm_seven(source_exemplars):
    """Single-image energy model trained on the class-7 exemplar."""
    from semadv.augment import TransformFamily
    from semadv.ebm import EbmTrainConfig, train_single_image_ebm

    sources, labels = source_exemplars
    x_ori = sources[labels.tolist().index(7)]

    def build():
        cfg = EbmTrainConfig(steps=700, batch_size=16, lmc_steps=30,
                             lmc_step_size=0.1, seed=0)
        params, _ = train_single_image_ebm(x_ori, TransformFamily.mnist(), cfg)
        return params

    return cached_params("ebm-seven-v1", _energy_template, build), x_ori

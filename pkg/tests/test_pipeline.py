import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import semadv.nets as nets
import semadv.pipeline as pl
from semadv.classifiers import predict_logits
from semadv.pipeline import (AttackConfig, AttackModels, SampleRecord, refine,
                             rejection_sample, run_attack, surrogate_success_rate)


def constant_classifier(winner: int, n_classes: int = 10):
    """Real network parameters that always predict ``winner`` (zero weights,
    one-hot output bias), so logits are constant and input-gradient-free."""
    params = nets.init_classifier(np.random.default_rng(0), n_classes=n_classes)
    for p in params.values():
        p.data = np.zeros_like(p.data)
    params["fc2.b"].data[winner] = 10.0
    return params


def tiny_cfg(**kw):
    base = dict(m_samples=12, n_final=4, kappa=0.5, c1=5.0, c2=0.01, distance="l2sq",
                objective="ce", step_size=0.05, n_steps=10, seed=1, chunk=5)
    base.update(kw)
    return AttackConfig(**base)


@pytest.fixture(scope="module")
def x_ori():
    return np.clip(np.random.default_rng(3).random((1, 28, 28)).astype(np.float32), 0, 1)


# -- rejection sampling -----------------------------------------------------------


def test_rejection_keeps_all_when_victim_always_deceived(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    res = rejection_sample(x_ori, y_ori=7, y_tar=4, models=models, cfg=tiny_cfg())
    assert res.accepted == 12
    assert all(r.deceives for r in res.records)
    assert res.diagnostics["acceptance_rate"] == 1.0


def test_rejection_no_acceptance_is_typed_result(x_ori):
    models = AttackModels(victim=constant_classifier(2), aux=constant_classifier(0))
    res = rejection_sample(x_ori, y_ori=7, y_tar=4, models=models, cfg=tiny_cfg())
    assert res.records == []
    assert res.diagnostics["n_accepted"] == 0
    assert np.isfinite(res.diagnostics["mean_final_objective"])


def test_rejection_outputs_live_in_box_and_record_fields(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    res = rejection_sample(x_ori, y_ori=7, y_tar=4, models=models, cfg=tiny_cfg())
    for r in res.records:
        assert r.image.min() >= 0.0 and r.image.max() <= 1.0
        assert r.victim_logits.shape == (10,)
        assert np.isfinite(r.energy)
        assert 0.0 <= r.aux_score <= 1.0


def test_rejection_deterministic_under_seed(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    a = rejection_sample(x_ori, 7, 4, models, tiny_cfg())
    b = rejection_sample(x_ori, 7, 4, models, tiny_cfg())
    assert len(a.records) == len(b.records)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.image, rb.image)


def test_rejection_chunking_invariant(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    a = rejection_sample(x_ori, 7, 4, models, tiny_cfg(chunk=5))
    b = rejection_sample(x_ori, 7, 4, models, tiny_cfg(chunk=12))
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.image, rb.image)


def test_rejection_threaded_matches_serial(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    a = rejection_sample(x_ori, 7, 4, models, tiny_cfg(chunk=4, n_threads=1))
    b = rejection_sample(x_ori, 7, 4, models, tiny_cfg(chunk=4, n_threads=2))
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.image, rb.image)


# -- refinement --------------------------------------------------------------------


def rec(aux, energy):
    return SampleRecord(image=np.zeros((1, 2, 2), dtype=np.float32),
                        victim_logits=np.zeros(10), deceives=True,
                        energy=float(energy), aux_score=float(aux))


def test_refine_hand_trace():
    records = [rec(0.9, 5.0), rec(0.8, 1.0), rec(0.2, 0.0), rec(0.1, 0.0)]
    out = refine(records, kappa=0.5, n_final=4)
    assert [r.energy for r in out] == [1.0, 5.0]
    assert [r.aux_score for r in out] == [0.8, 0.9]


def test_refine_kappa_one_sorts_all_by_energy():
    records = [rec(0.5, 3.0), rec(0.6, 1.0), rec(0.7, 2.0)]
    out = refine(records, kappa=1.0, n_final=3)
    assert [r.energy for r in out] == [1.0, 2.0, 3.0]


def test_refine_n1_returns_min_energy_of_filtered():
    records = [rec(0.9, 5.0), rec(0.8, 1.0), rec(0.2, 0.0)]
    out = refine(records, kappa=0.67, n_final=1)
    assert len(out) == 1 and out[0].energy == 1.0  # filtered to the two top-aux records


def test_refine_empty_input():
    assert refine([], kappa=0.5, n_final=3) == []


def test_refine_minimum_one_survivor():
    records = [rec(0.5, 2.0), rec(0.4, 1.0)]
    out = refine(records, kappa=0.1, n_final=5)  # floor(0.2) = 0 -> keep 1
    assert len(out) == 1 and out[0].aux_score == 0.5


def test_refine_rejects_bad_kappa():
    with pytest.raises(ValueError, match="kappa"):
        refine([rec(0.5, 1.0)], kappa=0.0, n_final=1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-5, 5)), min_size=1, max_size=40),
       st.floats(0.05, 1.0), st.integers(1, 20))
def test_refine_properties(pairs, kappa, n_final):
    records = [rec(a, e) for a, e in pairs]
    out = refine(records, kappa, n_final)
    expect = min(n_final, max(1, math.floor(kappa * len(records))))
    assert len(out) == expect
    energies = [r.energy for r in out]
    assert energies == sorted(energies)
    assert all(any(r is s for s in records) for r in out)  # subset of the input


# -- surrogate scoring ------------------------------------------------------------


def test_surrogate_rate_always_and_never(x_ori):
    records = [rec(0.5, 1.0) for _ in range(5)]
    for r in records:
        r.image = x_ori
    assert surrogate_success_rate(records, 3, constant_classifier(3)) == 1.0
    assert surrogate_success_rate(records, 3, constant_classifier(4)) == 0.0


def test_surrogate_rate_half(digits, std_victim):
    _, _, Xte, yte = digits
    pred = predict_logits(std_victim, Xte[:400]).argmax(axis=1)
    ok = np.flatnonzero(pred == yte[:400])
    y_ori = int(yte[ok[0]])
    same = [i for i in ok if yte[i] == y_ori][:5]
    diff = [i for i in ok if yte[i] != y_ori][:5]
    records = [rec(0.5, 1.0) for _ in range(10)]
    for r, i in zip(records, same + diff):
        r.image = Xte[i]
    assert surrogate_success_rate(records, y_ori, std_victim) == pytest.approx(0.5)


def test_surrogate_rate_empty_rejected(std_victim):
    with pytest.raises(ValueError, match="record"):
        surrogate_success_rate([], 3, std_victim)


# -- run_attack and the grid --------------------------------------------------------


def test_run_attack_rejects_equal_classes(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    with pytest.raises(ValueError, match="differ"):
        run_attack(x_ori, 4, 4, models, tiny_cfg())


def test_run_attack_report_and_refined_deceive(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    report = run_attack(x_ori, 7, 4, models, tiny_cfg())
    assert all(r.deceives for r in report.refined)
    assert len(report.refined) == 4
    s = report.summary()
    assert s["n_accepted"] == 12 and 0 <= s["acceptance_rate"] <= 1
    assert "refined_mean_energy" in s


def test_run_attack_semantic_without_ebm_needs_trainer(x_ori):
    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    with pytest.raises(ValueError, match="ebm_trainer"):
        run_attack(x_ori, 7, 4, models, tiny_cfg(distance="semantic"))


def test_run_attack_semantic_uses_trainer(x_ori):
    calls = []

    def trainer(img):
        calls.append(1)
        return nets.init_energy_net(np.random.default_rng(0))

    models = AttackModels(victim=constant_classifier(4), aux=constant_classifier(0))
    report = run_attack(x_ori, 7, 4, models, tiny_cfg(distance="semantic", c1=0.1),
                        ebm_trainer=trainer)
    assert calls == [1]
    assert report.refined


def test_attack_grid_structure(digits):
    _, _, Xte, yte = digits
    from semadv.data import class_exemplars

    sources, labels = class_exemplars(Xte, yte, seed=0)
    keep = [i for i, c in enumerate(labels) if c in (3, 5)]
    sources, labels = sources[keep], labels[keep]
    models = AttackModels(victim=constant_classifier(5), aux=constant_classifier(0))
    surrogate = constant_classifier(3)
    rates, reports = pl.attack_grid(sources, labels, [3, 5], models, tiny_cfg(),
                                    surrogate)
    assert rates.shape == (2, 2)
    assert np.isnan(rates[0, 0]) and np.isnan(rates[1, 1])  # own class skipped
    # victim always says 5: the 3->5 attack accepts everything, 5->3 accepts nothing
    assert rates[0, 1] >= 0.0 and not np.isnan(rates[0, 1])
    assert rates[1, 0] == 0.0  # no acceptance counts as zero
    assert len(reports) == 2


def test_pgd_baseline_monotone_in_budget(std_victim, digits, source_exemplars):
    sources, labels = source_exemplars
    keep = [0, 1, 2]
    sources, labels = sources[keep], labels[keep]
    targets = sorted(int(c) for c in labels)
    counts = []
    for eps in (3.0, 5.0):
        out = pl.pgd_baseline_grid(std_victim, sources, labels, targets,
                                   norm="l2", eps=eps, alpha=0.2, steps=60)
        assert out["images"].min() >= 0.0 and out["images"].max() <= 1.0
        counts.append(int(out["deceives"].sum()))
    assert counts[1] >= counts[0]


def test_pgd_baseline_zero_eps_no_deception(std_victim, digits, source_exemplars):
    sources, labels = source_exemplars
    pred = predict_logits(std_victim, sources).argmax(axis=1)
    keep = [i for i in range(len(labels)) if pred[i] == labels[i]][:3]
    sources, labels = sources[keep], labels[keep]
    targets = sorted(int(c) for c in labels)
    out = pl.pgd_baseline_grid(std_victim, sources, labels, targets,
                               norm="linf", eps=0.0, alpha=0.04, steps=3)
    assert int(out["deceives"].sum()) == 0

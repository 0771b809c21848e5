import numpy as np
import pytest

from conftest import tiny_generator_config
from modalmask.data.generate import generate_synthetic_dataset
from modalmask.encoders import VisionConfig
from modalmask.evaluation import (
    EvalReport,
    UndefinedMetric,
    modality_attribution,
    roc_auc,
    weighted_auc,
)
from modalmask.model import init_model


def pairwise_auc_oracle(scores, labels):
    """O(n^2) all-pairs oracle: wins + half ties over positive-negative pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[np.asarray(labels) > 0]
    neg = scores[np.asarray(labels) <= 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def test_roc_perfect_ranking():
    assert roc_auc([0.9, 0.1], [1, 0]) == 1.0


def test_roc_tie_credit():
    assert roc_auc([0.5, 0.5], [1, 0]) == 0.5


def test_roc_four_score_case_against_oracle():
    # every positive outranks every negative here, so the oracle gives 1.0
    scores = [0.8, 0.6, 0.4, 0.7]
    labels = [1, 0, 0, 1]
    expect = pairwise_auc_oracle(scores, labels)
    assert expect == 1.0
    assert roc_auc(scores, labels) == expect


def test_roc_exact_oracle_equality_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 60))
        scores = rng.choice(np.linspace(0, 1, 7), size=n)
        labels = (rng.uniform(size=n) < 0.5).astype(float)
        if labels.min() == labels.max():
            labels[0] = 1.0 - labels[0]
        assert roc_auc(scores, labels) == pairwise_auc_oracle(scores, labels)


def test_roc_single_class_signals_undefined():
    with pytest.raises(UndefinedMetric):
        roc_auc([0.5, 0.7], [1, 1])
    with pytest.raises(UndefinedMetric):
        roc_auc([0.5, 0.7], [0, 0])


def test_weighted_auc_hand_oracle_two_classes():
    # class A: AUC 1.0, class B: AUC 0.0, equal positive counts -> 0.5
    scores = np.array([[0.9, 0.1], [0.1, 0.9]])
    y = np.array([[1.0, 1.0], [0.0, 0.0]])
    m = np.ones_like(y)
    report = weighted_auc(scores, y, m)
    assert abs(report.weighted_auc - 0.5) < 1e-12
    assert abs(sum(report.weights.values()) - 1.0) < 1e-12


def test_weighted_auc_single_defined_class():
    scores = np.array([[0.9, 0.5], [0.1, 0.5]])
    y = np.array([[1.0, 1.0], [0.0, 1.0]])
    m = np.ones_like(y)
    report = weighted_auc(scores, y, m)
    assert report.weighted_auc == 1.0
    assert "class1" in report.excluded


def test_weighted_auc_masked_labels_invariant_bitwise():
    rng = np.random.default_rng(1)
    scores = rng.uniform(size=(30, 4))
    y = (rng.uniform(size=(30, 4)) < 0.4).astype(float)
    m = (rng.uniform(size=(30, 4)) < 0.7).astype(float)
    base = weighted_auc(scores, y, m)
    y2 = y.copy()
    y2[m == 0] = 1.0 - y2[m == 0]
    again = weighted_auc(scores, y2, m)
    assert base.weighted_auc == again.weighted_auc
    assert base.weights == again.weights


def test_weighted_auc_sample_order_invariant():
    rng = np.random.default_rng(2)
    scores = rng.uniform(size=(25, 3))
    y = (rng.uniform(size=(25, 3)) < 0.5).astype(float)
    m = np.ones_like(y)
    perm = rng.permutation(25)
    a = weighted_auc(scores, y, m).weighted_auc
    b = weighted_auc(scores[perm], y[perm], m[perm]).weighted_auc
    assert a == b


def test_weighted_auc_all_undefined_signals():
    scores = np.array([[0.5], [0.6]])
    y = np.array([[1.0], [1.0]])
    with pytest.raises(UndefinedMetric):
        weighted_auc(scores, y, np.ones_like(y))


def _attribution_setup(seed=0):
    ds = generate_synthetic_dataset(tiny_generator_config(n=24, seed=seed, feature_missing=0.0))
    model = init_model(VisionConfig(8, 8, (4, 8), 8, 4), ds.schema, 3, seed,
                       tab_layers=1, fusion_layers=2, n_heads=2)
    return ds, model


def test_attribution_masses_sum_to_one_when_fully_available():
    ds, model = _attribution_setup(3)
    rows = modality_attribution(model, ds, np.arange(ds.n))
    assert len(rows) == 2
    for row in rows:
        assert abs(row["vision_mass"] + row["tabular_mass"] - 1.0) < 1e-9
        assert row["vision_mass"] > 0 and row["tabular_mass"] > 0


def test_attribution_zero_mass_for_missing_images():
    ds, model = _attribution_setup(4)
    ds.m_img[:] = 0.0
    rows = modality_attribution(model, ds, np.arange(ds.n))
    for row in rows:
        assert row["vision_mass"] == 0.0

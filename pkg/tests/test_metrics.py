"""Metric oracles: hand-computed F1, confusion bounds, PCA vs eigh."""

import numpy as np
import pytest

from plastic_nmn import metrics


def test_weighted_f1_perfect():
    labels = np.array([0, 1, 2, 2, 1, 0, 3])
    assert metrics.weighted_f1(labels, labels, 4) == 1.0


def test_weighted_f1_hand_example():
    # supports {A: 3, B: 1}, everything predicted A:
    # F1_A = 2*(3/4)*1/(3/4 + 1) = 6/7, F1_B = 0
    # weighted = (3*(6/7) + 1*0)/4 = 9/14 = 0.642857...
    labels = np.array([0, 0, 0, 1])
    preds = np.zeros(4, dtype=int)
    got = metrics.weighted_f1(preds, labels, 2)
    assert abs(got - 9.0 / 14.0) <= 1e-9
    assert abs(got - 0.642857) <= 1e-6


def test_weighted_f1_relabeling_invariance():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 5, size=400)
    preds = rng.integers(0, 5, size=400)
    base = metrics.weighted_f1(preds, labels, 5)
    perm = rng.permutation(5)
    assert abs(metrics.weighted_f1(perm[preds], perm[labels], 5) - base) <= 1e-12


def test_confusion_perfect_is_identity():
    labels = np.repeat(np.arange(4), 5)
    np.testing.assert_array_equal(
        metrics.confusion_matrix(labels, labels, 4), np.eye(4))


def test_confusion_single_predicted_class():
    labels = np.repeat(np.arange(3), 4)
    preds = np.full(12, 1)
    cm = metrics.confusion_matrix(preds, labels, 3)
    np.testing.assert_array_equal(cm[:, 1], np.ones(3))
    assert cm.sum() == 3.0


def test_confusion_rows_normalized_and_uniform_limit():
    rng = np.random.default_rng(5)
    n = 14000
    labels = rng.integers(0, 7, size=n)
    preds = rng.integers(0, 7, size=n)
    cm = metrics.confusion_matrix(preds, labels, 7)
    np.testing.assert_allclose(cm.sum(axis=1), 1.0, atol=1e-9)
    p = 1.0 / 7.0
    for c in range(7):
        support = (labels == c).sum()
        sigma = np.sqrt(p * (1 - p) / support)
        assert (np.abs(cm[c] - p) <= 3 * sigma).all()


def test_confusion_zero_support_row_stays_zero():
    cm = metrics.confusion_matrix([0, 0], [0, 0], 3)
    np.testing.assert_array_equal(cm[1], np.zeros(3))
    np.testing.assert_array_equal(cm[2], np.zeros(3))


# --- PCA ------------------------------------------------------------------------


def test_pca_collinear_second_component_vanishes():
    rng = np.random.default_rng(1)
    direction = np.array([2.0, -1.0, 0.5])
    X = rng.normal(size=(200, 1)) * direction[None, :]
    _, fractions = metrics.pca_top2(X)
    assert fractions[0] >= 1.0 - 1e-9
    assert fractions[1] <= 1e-9


def test_pca_isotropic_splits_evenly():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20000, 2))
    _, fractions = metrics.pca_top2(X)
    assert abs(fractions[0] - 0.5) <= 0.05
    assert abs(fractions[1] - 0.5) <= 0.05


def test_pca_matches_eigh_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 8)) @ rng.normal(size=(8, 8))
    coords, fractions = metrics.pca_top2(X)
    centered = X - X.mean(axis=0)
    eigvals = np.linalg.eigvalsh(centered.T @ centered / (X.shape[0] - 1))[::-1]
    np.testing.assert_allclose(fractions, eigvals[:2] / eigvals.sum(), atol=1e-9)
    # per-component variance along the recovered axes equals the eigenvalues
    got_var = coords.var(axis=0, ddof=1)
    np.testing.assert_allclose(got_var, eigvals[:2], rtol=1e-7)
    # rank-2 reconstruction error equals the trailing eigenvalue mass
    residual = (centered ** 2).sum() - (coords ** 2).sum()
    np.testing.assert_allclose(residual, (X.shape[0] - 1) * eigvals[2:].sum(),
                               rtol=1e-7)


def test_pca_deterministic_and_sign_fixed():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 5)) * np.array([3.0, 1.0, 0.5, 0.2, 0.1])
    a, fa = metrics.pca_top2(X)
    b, fb = metrics.pca_top2(X)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(fa, fb)


def test_pca_rejects_bad_input():
    with pytest.raises(ValueError):
        metrics.pca_top2(np.ones(5))
    with pytest.raises(ValueError):
        metrics.pca_top2(np.ones((1, 5)))


def test_nearest_centroid_separated_blobs():
    rng = np.random.default_rng(6)
    points = np.concatenate([
        rng.normal(0, 0.1, size=(50, 2)),
        rng.normal(5, 0.1, size=(50, 2)),
    ])
    labels = np.repeat([0, 1], 50)
    assert metrics.nearest_centroid_accuracy(points, labels) == 1.0

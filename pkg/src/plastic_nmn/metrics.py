"""Classification metrics and the 2-D PCA used for embedding export."""

from __future__ import annotations

import numpy as np


def per_class_stats(predictions, labels, n_classes):
    """Precision/recall/F1/support per class (zero where undefined)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    stats = []
    for c in range(n_classes):
        tp = int(((predictions == c) & (labels == c)).sum())
        fp = int(((predictions == c) & (labels != c)).sum())
        fn = int(((predictions != c) & (labels == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        stats.append({"precision": precision, "recall": recall, "f1": f1,
                      "support": int((labels == c).sum())})
    return stats


def weighted_f1(predictions, labels, n_classes=None):
    """Per-class F1 averaged with class-support weights."""
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(max(np.max(labels), np.max(predictions))) + 1
    stats = per_class_stats(predictions, labels, n_classes)
    total = sum(s["support"] for s in stats)
    if total == 0:
        raise ValueError("weighted_f1 needs at least one labelled sample")
    return sum(s["f1"] * s["support"] for s in stats) / total


def confusion_matrix(predictions, labels, n_classes, normalize=True):
    """Rows are actual classes; normalized rows sum to 1 where support > 0."""
    counts = np.zeros((n_classes, n_classes))
    for p, y in zip(np.asarray(predictions), np.asarray(labels)):
        counts[int(y), int(p)] += 1.0
    if not normalize:
        return counts
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def pca_top2(embeddings, tol=1e-9, max_iter=1000, seed=0):
    """Top two principal components by power iteration with deflation.

    Returns (coordinates (n, 2), explained-variance fractions (2,)).
    Component signs are fixed by making the largest-magnitude loading
    positive so repeated runs agree.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"pca_top2 needs an (n >= 2, k) matrix, got {X.shape}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (X.shape[0] - 1)
    total_var = np.trace(cov)
    rng = np.random.default_rng(seed)

    components, variances = [], []
    deflated = cov.copy()
    for _ in range(2):
        v = rng.standard_normal(cov.shape[0])
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = deflated @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        eigval = float(v @ deflated @ v)
        if v[np.abs(v).argmax()] < 0:
            v = -v
        components.append(v)
        variances.append(max(eigval, 0.0))
        deflated = deflated - eigval * np.outer(v, v)

    basis = np.stack(components, axis=1)
    fractions = (np.asarray(variances) / total_var if total_var > 0
                 else np.zeros(2))
    return centered @ basis, fractions


def nearest_centroid_accuracy(points, labels):
    """Accuracy of assigning each point to its nearest class centroid."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    centroids = np.stack([points[labels == c].mean(axis=0) for c in classes])
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((classes[d.argmin(axis=1)] == labels).mean())

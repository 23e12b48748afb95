"""Supervised training, cross-validation, and evaluation reports.

Training follows a fixed protocol: cross-entropy loss, Adam, batches of
32 processed as ordered sequences through the persistent memory state,
stratified window-level folds, weighted-F1 reporting.  Memory state and
controller traces reset at every epoch boundary and at evaluation start;
gradients truncate at batch boundaries.

All randomness is derived from the run seed through fixed stream tags,
so a seed pins the entire run.  At each epoch boundary the parameters
and optimizer moments are rounded to float32, the checkpoint storage
precision; resuming from a checkpoint therefore reproduces the
uninterrupted run bit-exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import metrics
from .models import LSTM_BASELINE, MODEL_KINDS, build_model
from .preprocess import N_CLASSES

# rng stream tags (seed, tag, fold, extra)
_TAG_FOLDS = 1
_TAG_MODEL = 2
_TAG_EPOCH = 3
_TAG_EMBED = 4


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch/batch diagnostic."""


@dataclass
class TrainConfig:
    model: str = "plastic-nmn"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 32
    epochs: int | None = None  # default: 50 for memory models, 150 baseline
    folds: int = 5
    seed: int = 0
    k: int = 80
    l: int = 25
    eta: float = 0.5
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        for name in ("beta1", "beta2", "eps", "batch", "k", "l"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:  # lr = 0 is a valid "learning disabled" setting
            raise ValueError("lr must be non-negative")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")

    def resolved_epochs(self):
        if self.epochs is not None:
            return self.epochs
        return 150 if self.model == LSTM_BASELINE else 50

    def to_dict(self):
        return asdict(self)


def _rng(seed, *tags):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus the step counter."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        params[name] -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return params, state


# ---------------------------------------------------------------------------
# folds and standardization


def stratified_folds(labels, folds=5, seed=0):
    """Seeded per-class shuffle into near-equal folds (sizes differ by <= 1)."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("folds must be at least 2")
    rng = _rng(seed, _TAG_FOLDS)
    fold_ids = np.empty(len(labels), dtype=np.intp)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n = len(idx)
        sizes = [n // folds + (1 if f < n % folds else 0) for f in range(folds)]
        start = 0
        for f, size in enumerate(sizes):
            fold_ids[idx[start: start + size]] = f
            start += size
    return fold_ids


@dataclass
class Standardizer:
    """Per-feature mean/std, fitted on training folds only.

    Values are projected to float32 at fit time so the in-memory scaler
    and its checkpointed form are identical.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, samples):
        stack = np.stack([s.features for s in samples])
        std = np.maximum(stack.std(axis=0), 1e-8)
        to_f32 = lambda a: a.astype("<f4").astype(np.float64)
        return cls(to_f32(stack.mean(axis=0)), to_f32(std))

    def apply(self, samples):
        stack = np.stack([s.features for s in samples])
        return (stack - self.mean) / self.std


# ---------------------------------------------------------------------------
# training


def _round_f32(arrays):
    for arr in arrays.values():
        arr[:] = arr.astype("<f4").astype(np.float64)


@dataclass
class FoldResult:
    model: object
    scaler: Standardizer
    loss_curve: list
    adam: AdamState
    epochs_run: int


def _make_model(config, fold):
    rng = _rng(config.seed, _TAG_MODEL, fold)
    model = build_model(config.model, rng, width=config.k, n_slots=config.l,
                        eta=config.eta, n_classes=config.n_classes)
    # start from f32-representable values so the epoch-boundary rounding
    # below is an identity on parameters the optimizer never moves
    _round_f32(model.arrays())
    return model


def train_fold(config, train_samples, fold=0, model=None, adam=None,
               scaler=None, start_epoch=0, loss_curve=None, epochs=None):
    """Train one fold; resumable from a checkpointed (model, adam) pair."""
    if model is None:
        model = _make_model(config, fold)
    if scaler is None:
        scaler = Standardizer.fit(train_samples)
    if adam is None:
        adam = AdamState(model.trainable())
    loss_curve = list(loss_curve or [])
    epochs = config.resolved_epochs() if epochs is None else epochs

    features = scaler.apply(train_samples)
    labels = np.asarray([s.label for s in train_samples])
    n = len(train_samples)
    params = model.trainable()

    for epoch in range(start_epoch, epochs):
        order = _rng(config.seed, _TAG_EPOCH, fold, epoch).permutation(n)
        state = model.initial_state()
        epoch_losses = []
        for lo in range(0, n, config.batch):
            chunk = order[lo: lo + config.batch]
            tape = ad.Tape()
            result = model.forward_batch(tape, features[chunk], labels[chunk], state)
            loss = float(result.loss.value)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch} "
                    f"(model={config.model}, fold={fold})"
                )
            tape.backward(result.loss)
            grads = {name: result.param_nodes[name].grad for name in params}
            adam_step(params, grads, adam, config)
            state = result.state.detach() if result.state is not None else None
            epoch_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))
        # storage-precision boundary: keeps resume-from-checkpoint exact
        _round_f32(model.arrays())
        _round_f32(adam.m)
        _round_f32(adam.v)
    return FoldResult(model, scaler, loss_curve, adam, epochs)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalOutcome:
    predictions: np.ndarray
    labels: np.ndarray
    logits: np.ndarray
    embeddings: np.ndarray
    sample_ids: list


def evaluate(model, scaler, samples, batch=32):
    """Stream samples in dataset order through a freshly reset state."""
    features = scaler.apply(samples)
    labels = np.asarray([s.label for s in samples])
    state = model.initial_state()
    logits, embeddings = [], []
    for lo in range(0, len(samples), batch):
        tape = ad.Tape()
        result = model.forward_batch(tape, features[lo: lo + batch], None, state)
        state = result.state.detach() if result.state is not None else None
        logits.append(result.logits)
        embeddings.append(result.embeddings)
    logits = np.concatenate(logits)
    return EvalOutcome(logits.argmax(axis=1), labels, logits,
                       np.concatenate(embeddings), [s.sample_id for s in samples])


def extract_embeddings(model, scaler, samples, n=500, seed=0):
    """Seeded sample of per-window embeddings from one evaluation pass."""
    outcome = evaluate(model, scaler, samples)
    if n > len(samples):
        warnings.warn(f"requested {n} embeddings but only {len(samples)} samples "
                      "are available; using all of them")
        picked = np.arange(len(samples))
    else:
        picked = _rng(seed, _TAG_EMBED).choice(len(samples), size=n, replace=False)
        picked.sort()
    ids = [outcome.sample_ids[i] for i in picked]
    return ids, outcome.labels[picked], outcome.embeddings[picked]


def embedding_table(model, scaler, samples, n=500, seed=0):
    """(rows, explained-variance fractions) for the 2-D embedding export."""
    ids, labels, embeddings = extract_embeddings(model, scaler, samples, n, seed)
    coords, fractions = metrics.pca_top2(embeddings)
    rows = [
        {"id": i, "label": int(y), "pc1": float(c[0]), "pc2": float(c[1])}
        for i, y, c in zip(ids, labels, coords)
    ]
    return rows, fractions


# ---------------------------------------------------------------------------
# cross-validation reports


@dataclass
class EvalReport:
    model: str
    seed: int
    fold_f1: list
    mean_weighted_f1: float
    per_class: list          # pooled over evaluated folds
    confusion: list          # pooled, row-normalized
    embedding_rows: list = field(default_factory=list)
    explained_variance: list = field(default_factory=list)

    def to_dict(self):
        return {
            "model": self.model,
            "seed": self.seed,
            "fold_weighted_f1": [round(v, 12) for v in self.fold_f1],
            "mean_weighted_f1": round(self.mean_weighted_f1, 12),
            "per_class": self.per_class,
            "confusion": self.confusion,
            "embedding_rows": self.embedding_rows,
            "explained_variance": self.explained_variance,
        }


def build_report(config, outcomes, embedding_rows=None, fractions=None):
    """Assemble the report from per-fold evaluation outcomes."""
    fold_f1 = [metrics.weighted_f1(o.predictions, o.labels, config.n_classes)
               for o in outcomes]
    pooled_pred = np.concatenate([o.predictions for o in outcomes])
    pooled_true = np.concatenate([o.labels for o in outcomes])
    per_class = metrics.per_class_stats(pooled_pred, pooled_true, config.n_classes)
    confusion = metrics.confusion_matrix(pooled_pred, pooled_true, config.n_classes)
    return EvalReport(
        model=config.model,
        seed=config.seed,
        fold_f1=[float(v) for v in fold_f1],
        mean_weighted_f1=float(np.mean(fold_f1)),
        per_class=per_class,
        confusion=confusion.tolist(),
        embedding_rows=embedding_rows or [],
        explained_variance=[float(v) for v in (fractions if fractions is not None else [])],
    )


def run_cross_validation(config, samples, epochs=None, embed_n=None,
                         keep_models=False):
    """Train and evaluate every fold; returns (EvalReport, fold results)."""
    labels = [s.label for s in samples]
    fold_ids = stratified_folds(labels, config.folds, config.seed)
    outcomes, results = [], []
    embedding_rows, fractions = None, None
    for fold in range(config.folds):
        train = [s for s, f in zip(samples, fold_ids) if f != fold]
        test = [s for s, f in zip(samples, fold_ids) if f == fold]
        result = train_fold(config, train, fold=fold, epochs=epochs)
        outcome = evaluate(result.model, result.scaler, test)
        outcomes.append(outcome)
        if embed_n is not None and fold == 0:
            embedding_rows, fractions = embedding_table(
                result.model, result.scaler, test, n=embed_n, seed=config.seed)
        results.append(result if keep_models else None)
    report = build_report(config, outcomes, embedding_rows, fractions)
    return report, results

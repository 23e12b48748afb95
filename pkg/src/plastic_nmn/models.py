"""Full classifiers: memory-augmented variants and the plain LSTM baseline.

All variants share the two-layer stacked encoder and a linear softmax
head.  The memory variants thread one shared MemoryState through the
samples of a batch in order, so a batch is one truncated-BPTT window;
the baseline is stateless across samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import memory as mem
from .lstm import StackedEncoder
from .preprocess import N_BANDS, N_CHANNELS, N_CLASSES

PLASTIC_NMN = "plastic-nmn"
NMN_FIXED = "nmn-fixed"
LSTM_BASELINE = "lstm-baseline"
MODEL_KINDS = (PLASTIC_NMN, NMN_FIXED, LSTM_BASELINE)


@dataclass
class BatchResult:
    loss: object          # scalar node, or None when no labels were given
    logits: np.ndarray    # (batch, classes)
    embeddings: np.ndarray
    state: object         # propagated MemoryState (None for the baseline)
    param_nodes: dict     # name -> leaf node, for gradient collection


class _Head:
    def __init__(self, width, n_classes, rng):
        bound = 1.0 / np.sqrt(width)
        self.w = rng.uniform(-bound, bound, size=(width, n_classes))
        self.b = np.zeros(n_classes)

    def arrays(self):
        return {"head.w": self.w, "head.b": self.b}

    def bind(self, tape):
        return (tape.leaf(self.w, requires_grad=True, name="head.w"),
                tape.leaf(self.b, requires_grad=True, name="head.b"))


def _collect_param_nodes(tape):
    return {n.name: n for n in tape.nodes if n.requires_grad and n.name}


class NmnClassifier:
    """Encoder -> external memory -> linear head."""

    def __init__(self, kind, rng, width=80, n_slots=25, eta=0.5,
                 n_classes=N_CLASSES):
        if kind not in (PLASTIC_NMN, NMN_FIXED):
            raise ValueError(f"unknown memory model kind {kind!r}")
        self.kind = kind
        self.width = width
        self.n_classes = n_classes
        self.encoder = StackedEncoder(N_CHANNELS, N_BANDS, width, rng)
        mode = mem.PLASTIC if kind == PLASTIC_NMN else mem.LSTM
        self.memory = mem.MemoryModule(n_slots, width, eta, mode, rng)
        self.head = _Head(width, n_classes, rng)

    def arrays(self):
        out = self.encoder.arrays()
        out.update(self.memory.arrays())
        out.update(self.head.arrays())
        return out

    def trainable(self):
        out = self.encoder.arrays()
        out.update(self.memory.trainable())
        out.update(self.head.arrays())
        return out

    def load_arrays(self, values):
        own = self.arrays()
        missing = set(own) - set(values)
        if missing:
            raise KeyError(f"checkpoint is missing arrays: {sorted(missing)}")
        for name, arr in own.items():
            arr[:] = values[name]

    def initial_state(self):
        return self.memory.initial_state()

    def forward_batch(self, tape, features, labels, state):
        enc_bound = self.encoder.bind(tape)
        mem_bound = self.memory.bind(tape)
        head_w, head_b = self.head.bind(tape)

        encoded = self.encoder.encode_batch(tape, enc_bound, features)
        outputs = []
        for i in range(features.shape[0]):
            x_i = ad.row_select(encoded, i)
            m_i, state = mem.memory_step(mem_bound, x_i, state,
                                         self.memory.eta, self.memory.mode)
            outputs.append(m_i)
        stacked = ad.stack_rows(outputs)
        logits = ad.add_rowvec(ad.matmul(stacked, head_w), head_b)
        loss = None
        if labels is not None:
            loss = ad.cross_entropy_with_logits(logits, labels)
        return BatchResult(loss, logits.value, stacked.value, state,
                           _collect_param_nodes(tape))


class LstmBaseline:
    """Encoder -> linear head; no cross-sample state."""

    kind = LSTM_BASELINE

    def __init__(self, rng, width=80, n_classes=N_CLASSES):
        self.width = width
        self.n_classes = n_classes
        self.encoder = StackedEncoder(N_CHANNELS, N_BANDS, width, rng)
        self.head = _Head(width, n_classes, rng)

    def arrays(self):
        out = self.encoder.arrays()
        out.update(self.head.arrays())
        return out

    trainable = arrays

    def load_arrays(self, values):
        own = self.arrays()
        missing = set(own) - set(values)
        if missing:
            raise KeyError(f"checkpoint is missing arrays: {sorted(missing)}")
        for name, arr in own.items():
            arr[:] = values[name]

    def initial_state(self):
        return None

    def forward_batch(self, tape, features, labels, state):
        enc_bound = self.encoder.bind(tape)
        head_w, head_b = self.head.bind(tape)
        encoded = self.encoder.encode_batch(tape, enc_bound, features)
        logits = ad.add_rowvec(ad.matmul(encoded, head_w), head_b)
        loss = None
        if labels is not None:
            loss = ad.cross_entropy_with_logits(logits, labels)
        return BatchResult(loss, logits.value, encoded.value, None,
                           _collect_param_nodes(tape))


def build_model(kind, rng, width=80, n_slots=25, eta=0.5, n_classes=N_CLASSES):
    if kind == LSTM_BASELINE:
        return LstmBaseline(rng, width, n_classes)
    return NmnClassifier(kind, rng, width, n_slots, eta, n_classes)

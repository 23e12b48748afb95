"""LSTM cells and the two-layer stacked sequence encoder.

One preprocessed sample is a channels x bands matrix; the encoder walks
the 20 montage channels as a 20-step sequence of 24-band feature vectors
and returns the final hidden state of the top layer.  Gate equations are
the standard formulation: i, f, o use the logistic sigmoid, the candidate
and the output squashing use tanh, c' = f*c + i*g, h' = o*tanh(c').
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

GATES = ("i", "f", "g", "o")


@dataclass
class LstmState:
    """Hidden and cell activations for one layer (nodes or plain arrays)."""

    h: object
    c: object


class LstmParams:
    """Per-gate input weights (in, h), recurrent weights (h, h), biases (h,)."""

    def __init__(self, w, u, b):
        self.w = w
        self.u = u
        self.b = b
        shapes = {g: (w[g].shape, u[g].shape, b[g].shape) for g in GATES}
        first = shapes[GATES[0]]
        if any(s != first for s in shapes.values()):
            raise ad.ShapeError(f"inconsistent gate shapes: {shapes}")
        (in_dim, hidden) = first[0]
        if first[1] != (hidden, hidden) or first[2] != (hidden,):
            raise ad.ShapeError(f"inconsistent cell shapes: {first}")
        self.input_dim = in_dim
        self.hidden = hidden

    @classmethod
    def init(cls, input_dim, hidden, rng):
        """Uniform +-1/sqrt(fan_in) weights; forget-gate bias starts at +1."""
        bw = 1.0 / np.sqrt(input_dim)
        bu = 1.0 / np.sqrt(hidden)
        w = {g: rng.uniform(-bw, bw, size=(input_dim, hidden)) for g in GATES}
        u = {g: rng.uniform(-bu, bu, size=(hidden, hidden)) for g in GATES}
        b = {g: np.zeros(hidden) for g in GATES}
        b["f"] = np.ones(hidden)
        return cls(w, u, b)

    def arrays(self, prefix):
        out = {}
        for g in GATES:
            out[f"{prefix}.w_{g}"] = self.w[g]
            out[f"{prefix}.u_{g}"] = self.u[g]
            out[f"{prefix}.b_{g}"] = self.b[g]
        return out

    def bind(self, tape, prefix):
        """Wrap the parameter arrays as trainable leaves on a tape."""
        bound = {}
        for g in GATES:
            bound[f"w_{g}"] = tape.leaf(self.w[g], requires_grad=True, name=f"{prefix}.w_{g}")
            bound[f"u_{g}"] = tape.leaf(self.u[g], requires_grad=True, name=f"{prefix}.u_{g}")
            bound[f"b_{g}"] = tape.leaf(self.b[g], requires_grad=True, name=f"{prefix}.b_{g}")
        return bound


def _affine(x, h, w, u, b):
    pre = ad.add(ad.matmul(x, w), ad.matmul(h, u))
    if pre.value.ndim == 2:
        return ad.add_rowvec(pre, b)
    return ad.add(pre, b)


def lstm_cell_step(cell, state, x):
    """One cell update; works on single vectors or (batch, dim) matrices.

    `cell` holds bound gate nodes (see LstmParams.bind), `state` the
    previous LstmState of nodes, `x` the input node.
    """
    i = ad.sigmoid(_affine(x, state.h, cell["w_i"], cell["u_i"], cell["b_i"]))
    f = ad.sigmoid(_affine(x, state.h, cell["w_f"], cell["u_f"], cell["b_f"]))
    g = ad.tanh(_affine(x, state.h, cell["w_g"], cell["u_g"], cell["b_g"]))
    o = ad.sigmoid(_affine(x, state.h, cell["w_o"], cell["u_o"], cell["b_o"]))
    c_new = ad.add(ad.mul(f, state.c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return LstmState(h_new, c_new)


def zero_state(tape, hidden, batch=None):
    shape = (hidden,) if batch is None else (batch, hidden)
    return LstmState(tape.leaf(np.zeros(shape)), tape.leaf(np.zeros(shape)))


def _fused_layer(tape, bound, x_sm, steps, batch, hidden):
    """Run one layer over a step-major (steps*batch, in) input block.

    The four gate projections are concatenated column-wise so each step
    costs two matmuls; per-gate gradients land back on the per-gate
    leaves through the concat op.
    """
    w_cat = ad.concat([bound[f"w_{g}"] for g in GATES], axis=1)
    u_cat = ad.concat([bound[f"u_{g}"] for g in GATES], axis=1)
    b_cat = ad.concat([bound[f"b_{g}"] for g in GATES], axis=0)
    x_proj = ad.matmul(x_sm, w_cat)
    state = zero_state(tape, hidden, batch)
    outputs = []
    for s in range(steps):
        pre = ad.add(ad.slice_rows(x_proj, s * batch, (s + 1) * batch),
                     ad.matmul(state.h, u_cat))
        gates = ad.add_rowvec(pre, b_cat)
        i = ad.sigmoid(ad.slice_cols(gates, 0, hidden))
        f = ad.sigmoid(ad.slice_cols(gates, hidden, 2 * hidden))
        g = ad.tanh(ad.slice_cols(gates, 2 * hidden, 3 * hidden))
        o = ad.sigmoid(ad.slice_cols(gates, 3 * hidden, 4 * hidden))
        c_new = ad.add(ad.mul(f, state.c), ad.mul(i, g))
        state = LstmState(ad.mul(o, ad.tanh(c_new)), c_new)
        outputs.append(state.h)
    return outputs


class StackedEncoder:
    """Two stacked LSTM layers mapping one sample to its embedding x_t."""

    def __init__(self, n_steps, input_dim, hidden, rng):
        self.n_steps = n_steps
        self.input_dim = input_dim
        self.hidden = hidden
        self.layers = [
            LstmParams.init(input_dim, hidden, rng),
            LstmParams.init(hidden, hidden, rng),
        ]

    def arrays(self):
        out = {}
        for idx, layer in enumerate(self.layers):
            out.update(layer.arrays(f"enc{idx}"))
        return out

    def bind(self, tape):
        return [layer.bind(tape, f"enc{idx}") for idx, layer in enumerate(self.layers)]

    def _check(self, features):
        if features.shape[-2:] != (self.n_steps, self.input_dim):
            raise ad.ShapeError(
                f"encoder expects samples of shape ({self.n_steps}, {self.input_dim}), "
                f"got {features.shape[-2:]}"
            )

    def encode_batch(self, tape, bound, features):
        """Encode a (batch, steps, bands) block; returns a (batch, hidden) node."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3:
            raise ad.ShapeError(f"encode_batch expects 3-D input, got {features.shape}")
        self._check(features)
        batch, steps, _ = features.shape
        # step-major layout so each step is a contiguous row block
        x_sm = tape.leaf(np.ascontiguousarray(features.transpose(1, 0, 2))
                         .reshape(steps * batch, self.input_dim))
        h1 = _fused_layer(tape, bound[0], x_sm, steps, batch, self.hidden)
        h1_sm = ad.concat(h1, axis=0)
        h2 = _fused_layer(tape, bound[1], h1_sm, steps, batch, self.hidden)
        return h2[-1]

    def encode_sample(self, features):
        """Encode one channels x bands sample to its embedding (plain array)."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ad.ShapeError(f"encode_sample expects 2-D input, got {features.shape}")
        self._check(features)
        tape = ad.Tape()
        bound = self.bind(tape)
        out = self.encode_batch(tape, bound, features[None])
        return ad.row_select(out, 0).value

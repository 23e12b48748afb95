"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every primitive operation as it executes, so insertion
order is the topological order.  backward() replays the record once in
reverse, accumulating vector-Jacobian products into per-node gradient
buffers.  Shapes are validated when an operation is recorded, so errors
name the offending operation instead of surfacing as a later numpy
failure.  Broadcasting is restricted to the row/column duplication the
model equations actually need (add_rowvec, colmul, outer).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


def as_array(values, check=True):
    """Coerce to a float64 ndarray; reject NaN/Inf when check is true."""
    arr = np.asarray(values, dtype=np.float64)
    if check and arr.size and not np.isfinite(arr).all():
        raise ValueError("non-finite values are not valid array contents")
    return arr


class Node:
    """One recorded value plus its (lazily allocated) gradient buffer."""

    __slots__ = ("tape", "value", "grad", "requires_grad", "name", "_vjp")

    def __init__(self, tape, value, requires_grad=False, name=None, vjp=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or 'op'}, shape={self.value.shape})"


class Tape:
    """Execution record of one forward pass.

    A tape is single-threaded; independent tapes share nothing and may
    run concurrently.  Leaf values are treated as immutable for the
    lifetime of the tape.
    """

    def __init__(self):
        self.nodes = []

    def leaf(self, value, requires_grad=False, name=None, check=True):
        """Record an input or parameter array as a graph leaf."""
        node = Node(self, as_array(value, check=check), requires_grad, name)
        self.nodes.append(node)
        return node

    def record(self, value, parents, vjp, name):
        requires = any(p.requires_grad for p in parents)
        node = Node(self, value, requires, name, vjp if requires else None)
        self.nodes.append(node)
        return node

    def zero_grad(self):
        for node in self.nodes:
            node.grad = None

    def backward(self, output, seed=None):
        """Seed the output gradient and sweep the record once in reverse.

        Leaves marked requires_grad that the sweep never reaches end up
        with zero gradients rather than None.
        """
        if not isinstance(output, Node) or output.tape is not self:
            raise ValueError("backward target was not recorded on this tape")
        if seed is None:
            seed = np.ones_like(output.value)
        else:
            seed = as_array(seed)
            if seed.shape != output.value.shape:
                raise ShapeError(
                    f"backward: seed shape {seed.shape} does not match "
                    f"output shape {output.value.shape}"
                )
        if output.requires_grad:
            _acc(output, seed)
        for node in reversed(self.nodes):
            if node.grad is not None and node._vjp is not None:
                node._vjp(node.grad)
        for node in self.nodes:
            if node.requires_grad and node._vjp is None and node.grad is None:
                node.grad = np.zeros_like(node.value)


def _acc(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad += g


def _acc_at(node, key, g):
    # scatter-accumulate into a slice of the parent's gradient buffer
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad[key] += g


def _same_tape(*nodes):
    tape = nodes[0].tape
    for other in nodes[1:]:
        if other.tape is not tape:
            raise ValueError("operands were recorded on different tapes")
    return tape


def _label(node):
    return f" '{node.name}'" if node.name else ""


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape}{_label(a)} vs {b.shape}{_label(b)}")
    def vjp(g):
        _acc(a, g)
        _acc(b, g)
    return _same_tape(a, b).record(a.value + b.value, (a, b), vjp, "add")


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape}{_label(a)} vs {b.shape}{_label(b)}")
    def vjp(g):
        _acc(a, g)
        _acc(b, -g)
    return _same_tape(a, b).record(a.value - b.value, (a, b), vjp, "sub")


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape}{_label(a)} vs {b.shape}{_label(b)}")
    def vjp(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)
    return _same_tape(a, b).record(a.value * b.value, (a, b), vjp, "mul")


def scale(a, factor):
    factor = float(factor)
    def vjp(g):
        _acc(a, g * factor)
    return a.tape.record(a.value * factor, (a,), vjp, "scale")


def tanh(a):
    out = np.tanh(a.value)
    def vjp(g):
        _acc(a, g * (1.0 - out * out))
    return a.tape.record(out, (a,), vjp, "tanh")


def sigmoid(a):
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    def vjp(g):
        _acc(a, g * out * (1.0 - out))
    return a.tape.record(out, (a,), vjp, "sigmoid")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: {av.shape}{_label(a)} @ {bv.shape}{_label(b)}")
    value = av @ bv
    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            _acc(a, g @ bv.T)
            _acc(b, av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            _acc(a, bv @ g)
            _acc(b, np.outer(av, g))
        elif av.ndim == 2 and bv.ndim == 1:
            _acc(a, np.outer(g, bv))
            _acc(b, av.T @ g)
        else:
            _acc(a, g * bv)
            _acc(b, g * av)
    return _same_tape(a, b).record(value, (a, b), vjp, "matmul")


def outer(u, v):
    """Outer product of two vectors, the broadcast form of the write rule."""
    if u.value.ndim != 1 or v.value.ndim != 1:
        raise ShapeError(f"outer: {u.shape}{_label(u)} x {v.shape}{_label(v)}")
    def vjp(g):
        _acc(u, g @ v.value)
        _acc(v, u.value @ g)
    return _same_tape(u, v).record(np.outer(u.value, v.value), (u, v), vjp, "outer")


def colmul(v, m):
    """Scale row i of matrix m by v[i] (column-duplication broadcast)."""
    if v.value.ndim != 1 or m.value.ndim != 2 or v.shape[0] != m.shape[0]:
        raise ShapeError(f"colmul: {v.shape}{_label(v)} * {m.shape}{_label(m)}")
    def vjp(g):
        _acc(v, (g * m.value).sum(axis=1))
        _acc(m, v.value[:, None] * g)
    return _same_tape(v, m).record(v.value[:, None] * m.value, (v, m), vjp, "colmul")


def add_rowvec(m, v):
    """Add vector v to every row of matrix m (row-duplication broadcast)."""
    if m.value.ndim != 2 or v.value.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: {m.shape}{_label(m)} + {v.shape}{_label(v)}")
    def vjp(g):
        _acc(m, g)
        _acc(v, g.sum(axis=0))
    return _same_tape(m, v).record(m.value + v.value, (m, v), vjp, "add_rowvec")


# ---------------------------------------------------------------------------
# shape surgery


def row_select(a, index):
    """Select row `index` of a matrix, or element `index` of a vector."""
    av = a.value
    if av.ndim not in (1, 2) or not (0 <= index < av.shape[0]):
        raise ShapeError(f"row_select: index {index} from shape {av.shape}{_label(a)}")
    def vjp(g):
        _acc_at(a, index, g)
    return a.tape.record(np.asarray(av[index]), (a,), vjp, "row_select")


def slice_rows(a, start, stop):
    if a.value.ndim != 2 or not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] of {a.shape}{_label(a)}")
    def vjp(g):
        _acc_at(a, slice(start, stop), g)
    return a.tape.record(a.value[start:stop], (a,), vjp, "slice_rows")


def slice_cols(a, start, stop):
    if a.value.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: [:, {start}:{stop}] of {a.shape}{_label(a)}")
    def vjp(g):
        _acc_at(a, (slice(None), slice(start, stop)), g)
    return a.tape.record(a.value[:, start:stop], (a,), vjp, "slice_cols")


def concat(parts, axis=0):
    """Concatenate nodes along axis 0 or 1; inverse of the slice ops."""
    if not parts:
        raise ShapeError("concat: no operands")
    nd = parts[0].value.ndim
    if any(p.value.ndim != nd for p in parts) or axis >= nd:
        raise ShapeError(
            f"concat: axis {axis} over shapes {[p.shape for p in parts]}"
        )
    tape = _same_tape(*parts)
    value = np.concatenate([p.value for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])
    def vjp(g):
        for part, j0, j1 in zip(parts, offsets[:-1], offsets[1:]):
            if axis == 0:
                _acc(part, g[j0:j1])
            else:
                _acc(part, g[:, j0:j1])
    return tape.record(value, tuple(parts), vjp, "concat")


def stack_rows(parts):
    """Stack 1-D nodes of equal length into a matrix, one per row."""
    if not parts or any(p.value.ndim != 1 for p in parts):
        raise ShapeError("stack_rows: operands must be 1-D")
    width = parts[0].shape[0]
    if any(p.shape[0] != width for p in parts):
        raise ShapeError(f"stack_rows: ragged lengths {[p.shape for p in parts]}")
    tape = _same_tape(*parts)
    def vjp(g):
        for i, part in enumerate(parts):
            _acc(part, g[i])
    return tape.record(np.stack([p.value for p in parts]), tuple(parts), vjp, "stack_rows")


# ---------------------------------------------------------------------------
# reductions and losses


def sum_all(a):
    def vjp(g):
        _acc(a, np.full_like(a.value, float(g)))
    return a.tape.record(np.asarray(a.value.sum()), (a,), vjp, "sum_all")


def mean_all(a):
    if a.value.size == 0:
        raise ShapeError("mean_all: empty operand")
    return scale(sum_all(a), 1.0 / a.value.size)


def softmax(a):
    """Stable softmax of a 1-D score vector (max-subtracted)."""
    if a.value.ndim != 1:
        raise ShapeError(f"softmax: need a vector, got {a.shape}{_label(a)}")
    shifted = a.value - a.value.max()
    e = np.exp(shifted)
    out = e / e.sum()
    def vjp(g):
        _acc(a, out * (g - np.dot(g, out)))
    return a.tape.record(out, (a,), vjp, "softmax")


def cross_entropy_with_logits(logits, labels):
    """Softmax cross-entropy against integer class labels.

    Accepts a single logit vector with a scalar label, or a (batch, classes)
    matrix with a label per row; the batched form returns the mean loss.
    """
    lv = logits.value
    if lv.ndim == 1:
        rows = lv[None, :]
        labs = np.asarray([labels], dtype=np.intp)
    elif lv.ndim == 2:
        rows = lv
        labs = np.asarray(labels, dtype=np.intp)
        if labs.shape != (lv.shape[0],):
            raise ShapeError(
                f"cross_entropy: {labs.shape} labels for {lv.shape} logits"
            )
    else:
        raise ShapeError(f"cross_entropy: logits shape {lv.shape}")
    if labs.min() < 0 or labs.max() >= rows.shape[1]:
        raise ShapeError(f"cross_entropy: label out of range for {rows.shape[1]} classes")
    n = rows.shape[0]
    shifted = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    norm = e.sum(axis=1)
    losses = np.log(norm) - shifted[np.arange(n), labs]
    probs = e / norm[:, None]
    def vjp(g):
        d = probs.copy()
        d[np.arange(n), labs] -= 1.0
        d *= float(g) / n
        _acc(logits, d[0] if lv.ndim == 1 else d)
    return logits.tape.record(np.asarray(losses.mean()), (logits,), vjp, "cross_entropy")


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_check(build, params, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `build(tape, leaves)` must construct a scalar-valued graph from the
    named leaf nodes.  Every element of every parameter is perturbed by
    +/-step; the relative error denominator is max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    tape = Tape()
    leaves = {k: tape.leaf(v, requires_grad=True, name=k) for k, v in params.items()}
    out = build(tape, leaves)
    if out.value.shape != ():
        raise ShapeError(
            f"finite_difference_check: output must be scalar, got {out.value.shape}"
        )
    tape.backward(out)
    analytic = {k: leaves[k].grad for k in params}

    def value_at(point):
        probe = Tape()
        fixed = {k: probe.leaf(v, name=k) for k, v in point.items()}
        return float(build(probe, fixed).value)

    worst = 0.0
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name, arr in base.items():
        for idx in np.ndindex(arr.shape):
            kept = arr[idx]
            arr[idx] = kept + step
            up = value_at(base)
            arr[idx] = kept - step
            down = value_at(base)
            arr[idx] = kept
            numeric = (up - down) / (2.0 * step)
            err = abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst

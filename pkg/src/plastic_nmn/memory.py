"""External memory stack with attention read/write and plastic controllers.

The memory is a matrix M with l slots of width k.  Each step runs

    q = input_controller(x)            query from the encoded sample
    z = softmax(M @ q)                 attention over slots
    c = z @ M                          convex read
    m = output_controller(x, c)        classification feature
    m' = update_controller(x, m)       write vector
    M'[i] = (1 - z[i]) * M[i] + z[i] * m'    slot-wise convex write

Plastic controllers combine a fixed connection with a plastic one: the
input controller computes tanh((w + alpha * Hebb) applied to x), while
the output and update controllers keep their fixed weights on the
encoded sample x and route the retrieved content (c, respectively m)
through the plastic term:

    m  = tanh(w_out applied to x  +  (alpha_out * Hebb_out) applied to c)
    m' = tanh(w_up  applied to x  +  (alpha_up  * Hebb_up ) applied to m)

Hebb is a per-connection trace updated after every evaluation by the
Oja-style rule

    Hebb[i,j] += eta * post[j] * (pre[i] - post[j] * Hebb[i,j])

with pre/post pairs (x, q), (c, m), (m, m').  Traces are state, not
parameters: they evolve during both training and inference but gradients
never flow through them.  The non-plastic flavour replaces each
projection with an LSTM cell that keeps its own hidden state across
steps and reads only its own input (x, c, m respectively).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .lstm import LstmParams, LstmState, lstm_cell_step

PLASTIC = "plastic"
LSTM = "lstm"
CONTROLLERS = ("input", "output", "update")

M_INIT_SCALE = 0.05


def _value(x):
    return x.value if isinstance(x, ad.Node) else np.asarray(x, dtype=np.float64)


def _node(tape, x, name=None):
    # internal state wrapped mid-stream: finiteness is policed by the
    # training loop's loss guard, not at leaf construction
    return x if isinstance(x, ad.Node) else tape.leaf(x, name=name, check=False)


@dataclass
class MemoryState:
    """Memory matrix plus the per-controller Hebbian traces.

    In LSTM-controller mode the traces stay zero and `ctrl` carries one
    LstmState per controller; both kinds of state follow the same reset
    policy (fresh at every epoch boundary and at evaluation start).
    """

    M: object
    hebb_input: np.ndarray
    hebb_output: np.ndarray
    hebb_update: np.ndarray
    ctrl: dict = field(default_factory=dict)

    def detach(self):
        """Snapshot with plain arrays, cutting any tape references."""
        ctrl = {
            name: LstmState(np.array(_value(s.h)), np.array(_value(s.c)))
            for name, s in self.ctrl.items()
        }
        return MemoryState(
            np.array(_value(self.M)),
            self.hebb_input.copy(),
            self.hebb_output.copy(),
            self.hebb_update.copy(),
            ctrl,
        )


def initial_state(n_slots, width, m_init, mode=PLASTIC):
    """Fresh state around a fixed initial memory matrix."""
    if m_init.shape != (n_slots, width):
        raise ad.ShapeError(f"initial memory must be {(n_slots, width)}, got {m_init.shape}")
    zeros = lambda: np.zeros((width, width))
    ctrl = {}
    if mode == LSTM:
        ctrl = {name: LstmState(np.zeros(width), np.zeros(width)) for name in CONTROLLERS}
    return MemoryState(m_init.copy(), zeros(), zeros(), zeros(), ctrl)


class MemoryModule:
    """Owns the controller parameters for one memory model."""

    def __init__(self, n_slots, width, eta, mode, rng):
        if mode not in (PLASTIC, LSTM):
            raise ValueError(f"unknown controller mode {mode!r}")
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"plasticity rate must lie in [0, 1], got {eta}")
        self.n_slots = n_slots
        self.width = width
        self.eta = eta
        self.mode = mode
        bound = 1.0 / np.sqrt(width)
        if mode == PLASTIC:
            self.w = {c: rng.uniform(-bound, bound, size=(width, width)) for c in CONTROLLERS}
            self.alpha = {c: rng.uniform(-bound, bound, size=(width, width)) for c in CONTROLLERS}
        else:
            self.cells = {c: LstmParams.init(width, width, rng) for c in CONTROLLERS}
        self.m_init = rng.uniform(-M_INIT_SCALE, M_INIT_SCALE, size=(n_slots, width))

    def arrays(self):
        out = {"memory.m_init": self.m_init}
        if self.mode == PLASTIC:
            for c in CONTROLLERS:
                out[f"memory.{c}.w"] = self.w[c]
                out[f"memory.{c}.alpha"] = self.alpha[c]
        else:
            for c in CONTROLLERS:
                out.update(self.cells[c].arrays(f"memory.{c}"))
        return out

    def trainable(self):
        return {k: v for k, v in self.arrays().items() if k != "memory.m_init"}

    def bind(self, tape):
        """Leaf nodes for all controller parameters on one tape."""
        if self.mode == PLASTIC:
            return {
                c: {
                    "w": tape.leaf(self.w[c], requires_grad=True, name=f"memory.{c}.w"),
                    "alpha": tape.leaf(self.alpha[c], requires_grad=True, name=f"memory.{c}.alpha"),
                }
                for c in CONTROLLERS
            }
        return {c: self.cells[c].bind(tape, f"memory.{c}") for c in CONTROLLERS}

    def initial_state(self):
        return initial_state(self.n_slots, self.width, self.m_init, self.mode)


# ---------------------------------------------------------------------------
# the individual memory operations (tape nodes in, tape nodes out)


def plastic_project(w, alpha, hebb, fixed_in, plastic_in):
    """tanh of the fixed projection plus the trace-gated plastic projection."""
    plastic = ad.matmul(plastic_in, ad.mul(alpha, hebb))
    return ad.tanh(ad.add(ad.matmul(fixed_in, w), plastic))


def _controller(bound, name, state, own_input, fixed_input, mode, tape):
    """Evaluate one controller; returns (output, new_ctrl_state_or_None)."""
    if mode == PLASTIC:
        hebb = tape.leaf(getattr(state, f"hebb_{name}"), name=f"hebb_{name}",
                         check=False)
        out = plastic_project(bound[name]["w"], bound[name]["alpha"], hebb,
                              fixed_input, own_input)
        return out, None
    prev = state.ctrl[name]
    prev_nodes = LstmState(_node(tape, prev.h), _node(tape, prev.c))
    new = lstm_cell_step(bound[name], prev_nodes, own_input)
    return new.h, new


def input_controller(bound, x, state, mode=PLASTIC, tape=None):
    """Build the memory query q from the encoded sample x."""
    return _controller(bound, "input", state, x, x, mode, tape or x.tape)


def output_controller(bound, c, state, x=None, mode=PLASTIC, tape=None):
    """Build the memory output m: fixed weights on x, plastic term on c.

    In LSTM mode the controller reads only c; x is ignored.
    """
    return _controller(bound, "output", state, c, x if x is not None else c,
                       mode, tape or c.tape)


def update_controller(bound, m, state, x=None, mode=PLASTIC, tape=None):
    """Build the write vector m': fixed weights on x, plastic term on m.

    In LSTM mode the controller reads only m; x is ignored.
    """
    return _controller(bound, "update", state, m, x if x is not None else m,
                       mode, tape or m.tape)


def attend(q, M):
    """Attention scores over slots: softmax of the slot/query similarities."""
    return ad.softmax(ad.matmul(M, q))


def read(z, M):
    """Convex combination of slots under the attention weights."""
    return ad.matmul(z, M)


def _check_simplex(z_values, tol=1e-6):
    if abs(z_values.sum() - 1.0) > tol or z_values.min() < -tol:
        raise ValueError(
            f"attention weights are not on the simplex (sum={z_values.sum():.8f}, "
            f"min={z_values.min():.3e})"
        )


def memory_write(M, z, m_new):
    """Slot-wise convex update: M'[i] = (1 - z[i]) * M[i] + z[i] * m'."""
    _check_simplex(_value(z))
    return ad.add(ad.sub(M, ad.colmul(z, M)), ad.outer(z, m_new))


def hebb_step(hebb, pre, post, eta):
    """Advance one Hebbian trace (plain arrays; never on the tape)."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"plasticity rate must lie in [0, 1], got {eta}")
    hebb = np.asarray(hebb, dtype=np.float64)
    pre = np.asarray(pre, dtype=np.float64)
    post = np.asarray(post, dtype=np.float64)
    return hebb + eta * (np.outer(pre, post) - hebb * (post * post)[None, :])


def memory_step(bound, x, state, eta, mode=PLASTIC):
    """One full pass: query, attend, read, output, write, trace updates.

    Returns the classification feature m and the propagated MemoryState.
    The new memory matrix stays a tape node so gradients flow across
    steps; detach() at a truncation boundary.
    """
    tape = x.tape
    M = _node(tape, state.M, name="M")

    q, ctrl_in = input_controller(bound, x, state, mode, tape)
    z = attend(q, M)
    c = read(z, M)
    m, ctrl_out = output_controller(bound, c, state, x, mode, tape)
    m_new, ctrl_up = update_controller(bound, m, state, x, mode, tape)
    M_next = memory_write(M, z, m_new)

    if mode == PLASTIC:
        hebb_in = hebb_step(state.hebb_input, _value(x), q.value, eta)
        hebb_out = hebb_step(state.hebb_output, c.value, m.value, eta)
        hebb_up = hebb_step(state.hebb_update, m.value, m_new.value, eta)
        ctrl = {}
    else:
        hebb_in = state.hebb_input
        hebb_out = state.hebb_output
        hebb_up = state.hebb_update
        ctrl = {"input": ctrl_in, "output": ctrl_out, "update": ctrl_up}

    return m, MemoryState(M_next, hebb_in, hebb_out, hebb_up, ctrl)

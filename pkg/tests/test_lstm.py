"""LSTM cell and stacked-encoder behaviour."""

import numpy as np
import pytest

from plastic_nmn import autodiff as ad
from plastic_nmn.lstm import (
    GATES,
    LstmParams,
    LstmState,
    StackedEncoder,
    lstm_cell_step,
    zero_state,
)


def _zero_params(input_dim, hidden):
    return LstmParams(
        {g: np.zeros((input_dim, hidden)) for g in GATES},
        {g: np.zeros((hidden, hidden)) for g in GATES},
        {g: np.zeros(hidden) for g in GATES},
    )


def _step_values(params, h, c, x):
    tape = ad.Tape()
    cell = params.bind(tape, "cell")
    state = LstmState(tape.leaf(h), tape.leaf(c))
    new = lstm_cell_step(cell, state, tape.leaf(x))
    return new.h.value, new.c.value


def test_zero_everything_stays_zero():
    params = _zero_params(3, 4)
    h, c = _step_values(params, np.zeros(4), np.zeros(4), np.zeros(3))
    np.testing.assert_array_equal(h, np.zeros(4))
    np.testing.assert_array_equal(c, np.zeros(4))


def test_scalar_cell_hand_evaluation():
    # all weights zero, candidate bias atanh(0.8), zero state:
    # i = f = o = 0.5, g = 0.8 -> c' = 0.4, h' = 0.5*tanh(0.4)
    params = _zero_params(1, 1)
    params.b["g"] = np.array([np.arctanh(0.8)])
    h, c = _step_values(params, np.zeros(1), np.zeros(1), np.zeros(1))
    np.testing.assert_allclose(c, 0.4, atol=1e-12)
    np.testing.assert_allclose(h, 0.189974, atol=1e-6)


def test_hidden_state_stays_bounded():
    rng = np.random.default_rng(5)
    for _ in range(25):
        params = LstmParams.init(6, 5, rng)
        for g in GATES:  # exaggerate the weights to push toward saturation
            params.w[g] *= 40.0
            params.u[g] *= 40.0
        h, c = _step_values(
            params, rng.normal(size=5), rng.normal(size=5), rng.normal(size=6)
        )
        assert np.abs(h).max() <= 1.0
        assert np.isfinite(c).all()


def test_cell_step_matches_finite_differences():
    rng = np.random.default_rng(17)
    params = LstmParams.init(3, 2, rng)
    flat = params.arrays("cell")
    flat["x"] = rng.normal(size=3)
    flat["h0"] = rng.normal(size=2) * 0.5
    flat["c0"] = rng.normal(size=2) * 0.5

    def build(tape, leaves):
        cell = {k.split(".")[1]: leaves[f"cell.{k.split('.')[1]}"] for k in flat if k.startswith("cell.")}
        state = LstmState(leaves["h0"], leaves["c0"])
        new = lstm_cell_step(cell, state, leaves["x"])
        return ad.sum_all(ad.add(new.h, new.c))

    assert ad.finite_difference_check(build, flat, step=1e-5) <= 1e-4


def test_fused_layer_equals_repeated_cell_steps():
    rng = np.random.default_rng(23)
    enc = StackedEncoder(n_steps=6, input_dim=4, hidden=5, rng=rng)
    feats = rng.normal(size=(3, 6, 4))

    tape = ad.Tape()
    out_fused = enc.encode_batch(tape, enc.bind(tape), feats).value

    # reference path: explicit per-step cell updates, batch row by row
    for b in range(3):
        tape2 = ad.Tape()
        bound = enc.bind(tape2)
        states = [zero_state(tape2, 5), zero_state(tape2, 5)]
        for s in range(6):
            states[0] = lstm_cell_step(bound[0], states[0], tape2.leaf(feats[b, s]))
            states[1] = lstm_cell_step(bound[1], states[1], states[0].h)
        np.testing.assert_allclose(states[1].h.value, out_fused[b], atol=1e-12)


def test_encode_zero_sample_is_zero_vector():
    rng = np.random.default_rng(1)
    enc = StackedEncoder(n_steps=20, input_dim=24, hidden=80, rng=rng)
    zero_enc = StackedEncoder(n_steps=20, input_dim=24, hidden=80, rng=rng)
    for layer in zero_enc.layers:
        for g in GATES:
            layer.w[g][:] = 0.0
            layer.u[g][:] = 0.0
            layer.b[g][:] = 0.0
    out = zero_enc.encode_sample(np.zeros((20, 24)))
    assert out.shape == (80,)
    np.testing.assert_array_equal(out, np.zeros(80))
    assert enc.encode_sample(np.zeros((20, 24))).shape == (80,)


def test_encoder_output_open_unit_interval():
    rng = np.random.default_rng(9)
    enc = StackedEncoder(n_steps=20, input_dim=24, hidden=80, rng=rng)
    out = enc.encode_sample(rng.normal(0, 3, size=(20, 24)))
    assert (np.abs(out) < 1.0).all()


def test_encoder_rejects_wrong_shapes():
    enc = StackedEncoder(n_steps=20, input_dim=24, hidden=80, rng=np.random.default_rng(0))
    with pytest.raises(ad.ShapeError):
        enc.encode_sample(np.zeros((19, 24)))
    with pytest.raises(ad.ShapeError):
        enc.encode_sample(np.zeros((20, 23)))
    with pytest.raises(ad.ShapeError):
        enc.encode_sample(np.zeros(20))


def test_every_step_is_consumed():
    rng = np.random.default_rng(31)
    enc = StackedEncoder(n_steps=20, input_dim=24, hidden=80, rng=rng)
    feats = rng.normal(size=(20, 24))
    base = enc.encode_sample(feats)
    for step in (0, 10, 19):
        bumped = feats.copy()
        bumped[step] += 0.5
        assert np.abs(enc.encode_sample(bumped) - base).max() > 0


def test_band_permutation_equivariance():
    # permuting band columns together with first-layer input-weight rows
    # leaves the embedding unchanged
    rng = np.random.default_rng(37)
    enc = StackedEncoder(n_steps=20, input_dim=24, hidden=16, rng=rng)
    feats = rng.normal(size=(20, 24))
    base = enc.encode_sample(feats)

    perm = rng.permutation(24)
    permuted = StackedEncoder(n_steps=20, input_dim=24, hidden=16,
                              rng=np.random.default_rng(37))
    for g in GATES:
        permuted.layers[0].w[g] = enc.layers[0].w[g][perm]
        permuted.layers[0].u[g] = enc.layers[0].u[g]
        permuted.layers[0].b[g] = enc.layers[0].b[g]
    out = permuted.encode_sample(feats[:, perm])
    np.testing.assert_allclose(out, base, atol=1e-12)


def test_encode_batch_matches_encode_sample():
    rng = np.random.default_rng(41)
    enc = StackedEncoder(n_steps=20, input_dim=24, hidden=12, rng=rng)
    feats = rng.normal(size=(4, 20, 24))
    tape = ad.Tape()
    batch = enc.encode_batch(tape, enc.bind(tape), feats).value
    for i in range(4):
        np.testing.assert_allclose(enc.encode_sample(feats[i]), batch[i], atol=1e-12)

import math

import numpy as np
import pytest

from klcbl.lstm import (
    GATES,
    LstmConfig,
    LstmDirectionWeights,
    LstmWeights,
    bilstm_forward,
    init_lstm_weights,
    lstm_cell_step,
)
from klcbl.tensor import Tensor, check_gradients, precision


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def _zeros_weights(in_dim, hidden):
    mk = lambda shape: Tensor(np.zeros(shape), requires_grad=True)
    return LstmDirectionWeights(
        W={g: mk((hidden, in_dim)) for g in GATES},
        U={g: mk((hidden, hidden)) for g in GATES},
        b={g: mk(hidden) for g in GATES},
    )


def _random_weights(rng, in_dim, hidden):
    mk = lambda shape: Tensor(rng.normal(size=shape) * 0.5, requires_grad=True)
    return LstmDirectionWeights(
        W={g: mk((hidden, in_dim)) for g in GATES},
        U={g: mk((hidden, hidden)) for g in GATES},
        b={g: mk(hidden) for g in GATES},
    )


def _cell_oracle(x, h_prev, c_prev, w):
    # independent scalar-loop evaluation on python floats
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    hidden = len(h_prev)
    gates = {}
    for g in GATES:
        vals = []
        for r in range(hidden):
            acc = float(w.b[g].data[r])
            for j in range(len(x)):
                acc += float(w.W[g].data[r, j]) * x[j]
            for j in range(hidden):
                acc += float(w.U[g].data[r, j]) * h_prev[j]
            vals.append(acc)
        gates[g] = vals
    c_t = [
        sig(gates["f"][r]) * c_prev[r] + sig(gates["i"][r]) * math.tanh(gates["g"][r])
        for r in range(hidden)
    ]
    h_t = [sig(gates["o"][r]) * math.tanh(c_t[r]) for r in range(hidden)]
    return h_t, c_t


class TestCell:
    def test_zero_everything(self, f64):
        w = _zeros_weights(3, 2)
        h, c = lstm_cell_step(Tensor(np.zeros(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), w)
        assert np.array_equal(h.data, np.zeros(2))
        assert np.array_equal(c.data, np.zeros(2))

    def test_half_gates_carry_state(self, f64):
        # zero weights and biases: all gates sit at 0.5, candidate at 0
        w = _zeros_weights(3, 2)
        c_prev = np.array([0.8, -1.2])
        h, c = lstm_cell_step(Tensor(np.zeros(3)), Tensor(np.zeros(2)), Tensor(c_prev), w)
        assert np.allclose(c.data, 0.5 * c_prev)
        assert np.allclose(h.data, 0.5 * np.tanh(0.5 * c_prev))

    def test_random_vs_scalar_oracle(self, f64):
        rng = np.random.default_rng(5)
        w = _random_weights(rng, 2, 2)
        x = rng.normal(size=2)
        h_prev = rng.normal(size=2)
        c_prev = rng.normal(size=2)
        h, c = lstm_cell_step(Tensor(x), Tensor(h_prev), Tensor(c_prev), w)
        h_ref, c_ref = _cell_oracle(list(x), list(h_prev), list(c_prev), w)
        assert np.allclose(h.data, h_ref, atol=1e-12)
        assert np.allclose(c.data, c_ref, atol=1e-12)

    def test_state_containment(self, f64):
        rng = np.random.default_rng(6)
        w = _random_weights(rng, 3, 4)
        h = Tensor(np.zeros(4))
        c = Tensor(np.zeros(4))
        for _ in range(10):
            h, c = lstm_cell_step(Tensor(rng.normal(size=3) * 3), h, c, w)
            assert np.all(np.abs(h.data) < 1.0)


class TestBilstm:
    def test_default_dims(self, f64):
        cfg = LstmConfig()
        weights = init_lstm_weights(cfg, seed=11)
        x = Tensor(np.random.default_rng(7).normal(size=(3, 768)))
        out = bilstm_forward(x, weights.fwd, weights.bwd)
        assert out.shape == (128,)

    def test_zero_weights_zero_output(self, f64):
        wf, wb = _zeros_weights(4, 2), _zeros_weights(4, 2)
        out = bilstm_forward(Tensor(np.random.default_rng(8).normal(size=(5, 4))), wf, wb)
        assert np.array_equal(out.data, np.zeros(4))

    def test_single_step_is_two_cells(self, f64):
        rng = np.random.default_rng(9)
        wf = _random_weights(rng, 3, 2)
        wb = _random_weights(rng, 3, 2)
        x = rng.normal(size=(1, 3))
        out = bilstm_forward(Tensor(x), wf, wb)
        zero = lambda: Tensor(np.zeros(2))
        hf, _ = lstm_cell_step(Tensor(x[0]), zero(), zero(), wf)
        hb, _ = lstm_cell_step(Tensor(x[0]), zero(), zero(), wb)
        assert np.allclose(out.data, np.concatenate([hf.data, hb.data]))

    def test_reversal_swaps_halves(self, f64):
        rng = np.random.default_rng(10)
        wf = _random_weights(rng, 3, 2)
        wb = _random_weights(rng, 3, 2)
        x = rng.normal(size=(6, 3))
        fwd = bilstm_forward(Tensor(x), wf, wb).data
        rev = bilstm_forward(Tensor(x[::-1].copy()), wb, wf).data
        assert np.array_equal(fwd[:2], rev[2:])
        assert np.array_equal(fwd[2:], rev[:2])

    def test_forget_bias_initialized_to_one(self, f64):
        weights = init_lstm_weights(LstmConfig(in_dim=4, hidden_per_direction=3), seed=1)
        for direction in (weights.fwd, weights.bwd):
            assert np.array_equal(direction.b["f"].data, np.ones(3))
            assert np.array_equal(direction.b["i"].data, np.zeros(3))

    def test_init_deterministic(self, f64):
        cfg = LstmConfig(in_dim=4, hidden_per_direction=3)
        a = init_lstm_weights(cfg, seed=2)
        b = init_lstm_weights(cfg, seed=2)
        for (_, ta), (_, tb) in zip(a.fwd.tensors(), b.fwd.tensors()):
            assert np.array_equal(ta.data, tb.data)


def test_bptt_gradients_ten_seeds(f64):
    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        wf = _random_weights(rng, 3, 2)
        wb = _random_weights(rng, 3, 2)
        x = rng.normal(size=(5, 3))

        def loss_wrt_input(t):
            return (bilstm_forward(t, wf, wb) * w_out).sum()

        w_out = Tensor(rng.normal(size=4))
        assert check_gradients(loss_wrt_input, Tensor(x.copy())) < 1e-5

        # rotate through the weight tensors so all are covered across seeds
        names = [(g, kind) for g in GATES for kind in ("W", "U", "b")]
        gate, kind = names[seed % len(names)]
        fresh = Tensor(getattr(wf, kind)[gate].data.copy())
        err = check_gradients(
            lambda t: (bilstm_forward(Tensor(x), _swap(wf, kind, gate, t), wb) * w_out).sum(),
            fresh,
        )
        assert err < 1e-5, (seed, kind, gate, err)


def _swap(w, kind, gate, t):
    table = {"W": dict(w.W), "U": dict(w.U), "b": dict(w.b)}
    table[kind][gate] = t
    return LstmDirectionWeights(W=table["W"], U=table["U"], b=table["b"])

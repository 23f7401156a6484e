"""Bidirectional LSTM channel.

The standard cell (sigmoid input/forget/output gates, tanh candidate) is
built out of recorded tensor operations, so backpropagation through time
falls out of the tape. The channel output is the concatenation of the two
directions' terminal hidden states: a fixed 2*hidden vector (128 with the
defaults), which is what the fusion layer consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64, uniform_array
from .tensor import ShapeError, Tensor, concat, get_default_dtype, matmul, row

GATES = ("i", "f", "g", "o")


@dataclass
class LstmConfig:
    in_dim: int = 768
    hidden_per_direction: int = 64
    bidirectional: bool = True

    @property
    def output_dim(self) -> int:
        return (2 if self.bidirectional else 1) * self.hidden_per_direction


@dataclass
class LstmDirectionWeights:
    W: dict  # gate -> (hidden, in_dim)
    U: dict  # gate -> (hidden, hidden)
    b: dict  # gate -> (hidden,)

    def tensors(self):
        for gate in GATES:
            yield f"W_{gate}", self.W[gate]
            yield f"U_{gate}", self.U[gate]
            yield f"b_{gate}", self.b[gate]


@dataclass
class LstmWeights:
    fwd: LstmDirectionWeights
    bwd: LstmDirectionWeights


def _init_direction(cfg: LstmConfig, rng: SplitMix64) -> LstmDirectionWeights:
    h, d = cfg.hidden_per_direction, cfg.in_dim
    bound = float(np.sqrt(1.0 / h))
    dtype = get_default_dtype()
    W, U, b = {}, {}, {}
    for gate in GATES:
        W[gate] = Tensor(uniform_array(rng.next_u64(), (h, d), -bound, bound, dtype), requires_grad=True)
        U[gate] = Tensor(uniform_array(rng.next_u64(), (h, h), -bound, bound, dtype), requires_grad=True)
        # forget-gate bias starts at 1 so early training does not flush state
        init = np.ones(h, dtype=dtype) if gate == "f" else np.zeros(h, dtype=dtype)
        b[gate] = Tensor(init, requires_grad=True)
    return LstmDirectionWeights(W=W, U=U, b=b)


def init_lstm_weights(cfg: LstmConfig, seed: int) -> LstmWeights:
    rng = SplitMix64(seed)
    return LstmWeights(fwd=_init_direction(cfg, rng), bwd=_init_direction(cfg, rng))


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, w: LstmDirectionWeights):
    """One cell step: returns (h_t, c_t), differentiable through time."""
    pre = {
        gate: matmul(w.W[gate], x_t) + matmul(w.U[gate], h_prev) + w.b[gate] for gate in GATES
    }
    i = pre["i"].sigmoid()
    f = pre["f"].sigmoid()
    g = pre["g"].tanh()
    o = pre["o"].sigmoid()
    c_t = f * c_prev + i * g
    h_t = o * c_t.tanh()
    return h_t, c_t


def _run_direction(steps, w: LstmDirectionWeights, hidden: int, dtype) -> Tensor:
    h = Tensor(np.zeros(hidden, dtype=dtype))
    c = Tensor(np.zeros(hidden, dtype=dtype))
    for x_t in steps:
        h, c = lstm_cell_step(x_t, h, c, w)
    return h


def bilstm_forward(x: Tensor, weights_fwd: LstmDirectionWeights, weights_bwd: LstmDirectionWeights) -> Tensor:
    """Run both directions from zero states and concatenate the final
    hidden states: (T, in_dim) -> (2*hidden,)."""
    if x.data.ndim != 2:
        raise ShapeError(f"bilstm input must be (T, in_dim), got {x.shape}")
    t_len = x.shape[0]
    if t_len < 1:
        raise ShapeError("bilstm needs at least one time step")
    hidden = weights_fwd.b["i"].shape[0]
    steps = [row(x, t) for t in range(t_len)]
    h_fwd = _run_direction(steps, weights_fwd, hidden, x.data.dtype)
    h_bwd = _run_direction(reversed(steps), weights_bwd, hidden, x.data.dtype)
    return concat([h_fwd, h_bwd])

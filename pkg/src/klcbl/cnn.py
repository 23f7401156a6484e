"""Convolutional channel: position-wise 1-D filtering of the token
sequence into ``out_channels`` features, then global max pooling over time.

With the default kernel size of 1 the convolution is a position-shared
linear projection (each 768-d token row is mapped to 128 filter responses);
general kernel/stride/padding are supported behind the same entry point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import uniform_array
from .tensor import ShapeError, Tensor, get_default_dtype


@dataclass
class ConvConfig:
    in_dim: int = 768
    out_channels: int = 128
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    use_bias: bool = True
    activation: str = "relu"  # relu | none

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(
                f"bad conv geometry: kernel_size={self.kernel_size} "
                f"stride={self.stride} padding={self.padding}"
            )
        if self.activation not in ("relu", "none"):
            raise ValueError(f"activation must be 'relu' or 'none', got {self.activation!r}")


@dataclass
class ConvWeights:
    W: Tensor  # (out_channels, in_dim, kernel_size)
    b: Optional[Tensor] = None


def init_conv_weights(cfg: ConvConfig, seed: int) -> ConvWeights:
    """Uniform +-sqrt(6/(in+out)) filters, zero bias, from a seeded stream."""
    bound = float(np.sqrt(6.0 / (cfg.in_dim + cfg.out_channels)))
    dtype = get_default_dtype()
    w = uniform_array(seed, (cfg.out_channels, cfg.in_dim, cfg.kernel_size), -bound, bound, dtype)
    weights = ConvWeights(W=Tensor(w, requires_grad=True))
    if cfg.use_bias:
        weights.b = Tensor(np.zeros(cfg.out_channels, dtype=dtype), requires_grad=True)
    return weights


def conv1d_forward(x: Tensor, cfg: ConvConfig, weights: ConvWeights) -> Tensor:
    """Convolve a (T, in_dim) sequence into (T', out_channels).

    T' = (T + 2*padding - kernel_size) // stride + 1 and must be >= 1.
    Differentiable in x, W, and b.
    """
    if x.data.ndim != 2 or x.shape[1] != cfg.in_dim:
        raise ShapeError(f"conv input must be (T, {cfg.in_dim}), got {x.shape}")
    t_in = x.shape[0]
    k, s, p = cfg.kernel_size, cfg.stride, cfg.padding
    t_out = (t_in + 2 * p - k) // s + 1
    if t_out < 1:
        raise ShapeError(
            f"sequence too short: T={t_in} with kernel_size={k}, padding={p} "
            f"leaves no output positions"
        )
    w, b = weights.W, weights.b
    if w.shape != (cfg.out_channels, cfg.in_dim, k):
        raise ShapeError(f"filter shape {w.shape} does not match config {cfg}")

    xp = x.data if p == 0 else np.pad(x.data, ((p, p), (0, 0)))
    y = np.zeros((t_out, cfg.out_channels), dtype=x.data.dtype)
    for j in range(k):
        y += xp[j : j + (t_out - 1) * s + 1 : s] @ w.data[:, :, j].T
    if b is not None:
        y += b.data

    parents = (x, w) if b is None else (x, w, b)
    out = Tensor._from_op(y, parents, "conv1d")

    def backward():
        g = out.grad
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            for j in range(k):
                dw[:, :, j] = g.T @ xp[j : j + (t_out - 1) * s + 1 : s]
            w.accumulate_grad(dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[j : j + (t_out - 1) * s + 1 : s] += g @ w.data[:, :, j]
            x.accumulate_grad(dxp[p : p + t_in] if p else dxp)

    out._backward = backward if out._parents else None
    if cfg.activation == "relu":
        out = out.relu()
    return out


def global_max_pool(y: Tensor) -> Tensor:
    """Per-channel max over time: (T, C) -> (C,).

    The backward pass routes each channel's gradient to the first argmax
    row; at an exact tie this choice is one-sided, so gradient checks at
    tie points are expected to disagree with central differences.
    """
    if y.data.ndim != 2:
        raise ShapeError(f"global_max_pool needs (T, C), got {y.shape}")
    idx = np.argmax(y.data, axis=0)  # first maximal index per channel
    out = Tensor._from_op(y.data.max(axis=0), (y,), "global_max_pool")

    def backward():
        g = np.zeros_like(y.data)
        g[idx, np.arange(y.shape[1])] = out.grad
        y.accumulate_grad(g)

    out._backward = backward if out._parents else None
    return out

"""Kolmogorov-Arnold classification head.

Every edge (output j, input i) carries a learnable univariate function

    omega_ji * ( silu(x_i) + sum_m coeffs_jim * B_m(x_i) )

where the B_m are order-k B-spline bases over a uniform knot grid. A layer
sums its edges per output; the head stacks two layers (in -> hidden -> out).
The whole layer evaluation is one recorded operation with a closed-form
backward pass, so the large coefficient tables never expand into per-edge
graph nodes.

Past [grid_min, grid_max] basis support tapers through the k extension
knots and then vanishes, so a far out-of-range edge degrades to its silu
term alone; that is the out-of-range policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64, normal_array, uniform_array
from .tensor import ShapeError, Tensor, get_default_dtype


@dataclass(frozen=True)
class SplineGrid:
    grid_min: float = -2.0
    grid_max: float = 2.0
    intervals: int = 5  # G
    order: int = 3  # k

    def __post_init__(self):
        if self.intervals < 1 or self.order < 0:
            raise ValueError(f"bad grid: intervals={self.intervals}, order={self.order}")
        if not self.grid_max > self.grid_min:
            raise ValueError(f"bad grid range [{self.grid_min}, {self.grid_max}]")

    @property
    def spacing(self) -> float:
        return (self.grid_max - self.grid_min) / self.intervals

    @property
    def knots(self) -> np.ndarray:
        """Uniform knot vector of length G + 2k + 1, extended k knots past
        each bound so all interior bases are complete."""
        k = self.order
        return self.grid_min + self.spacing * np.arange(-k, self.intervals + k + 1, dtype=np.float64)

    @property
    def basis_count(self) -> int:
        return self.intervals + self.order


def _basis_matrices(vals: np.ndarray, grid: SplineGrid, knots: np.ndarray):
    """All order-k basis values (and derivatives) at each value.

    vals: flat array (n,). Returns (B, dB), each (n, G + k). Iterative
    Cox-de Boor over the interval indicators; half-open intervals, so a
    value left of the first or at/after the last knot activates nothing.
    """
    k = grid.order
    x = vals[:, None]
    b = ((knots[None, :-1] <= x) & (x < knots[None, 1:])).astype(vals.dtype)
    b_prev = b
    for q in range(1, k + 1):
        b_prev = b
        count = b.shape[1] - 1
        left = (x - knots[None, :count]) / (knots[None, q : q + count] - knots[None, :count])
        right = (knots[None, q + 1 : q + 1 + count] - x) / (
            knots[None, q + 1 : q + 1 + count] - knots[None, 1 : 1 + count]
        )
        b = left * b[:, :-1] + right * b[:, 1:]
    m = grid.basis_count
    if k == 0:
        return b, np.zeros_like(b)
    # d/dx B_{m,k} = k * (B_{m,k-1}/(t_{m+k}-t_m) - B_{m+1,k-1}/(t_{m+k+1}-t_{m+1}))
    db = k * (
        b_prev[:, :m] / (knots[None, k : k + m] - knots[None, :m])
        - b_prev[:, 1 : m + 1] / (knots[None, k + 1 : k + 1 + m] - knots[None, 1 : m + 1])
    )
    return b, db


def bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """Order-k basis values at a scalar point (float64, length G + k)."""
    if not np.isfinite(x):
        raise ValueError(f"bspline_basis needs a finite x, got {x}")
    b, _ = _basis_matrices(np.asarray([float(x)]), grid, grid.knots)
    return b[0]


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), the base function under every edge."""
    return x.silu()


@dataclass
class KanEdge:
    omega: Tensor  # scalar ()
    coeffs: Tensor  # (G + k,)


class KanLayer:
    """One edge table: omega (out, in) and coeffs (out, in, G + k)."""

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid, omega: Tensor, coeffs: Tensor):
        if omega.shape != (out_dim, in_dim) or coeffs.shape != (out_dim, in_dim, grid.basis_count):
            raise ShapeError(
                f"edge tables {omega.shape}/{coeffs.shape} do not match "
                f"{out_dim}x{in_dim} with {grid.basis_count} bases"
            )
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid = grid
        self.omega = omega
        self.coeffs = coeffs

    def edge(self, j: int, i: int) -> KanEdge:
        """Read-only snapshot of edge (output j, input i)."""
        return KanEdge(
            omega=Tensor(self.omega.data[j, i].copy()),
            coeffs=Tensor(self.coeffs.data[j, i].copy()),
        )

    def parameters(self):
        return [("omega", self.omega), ("coeffs", self.coeffs)]


def init_kan_layer(in_dim: int, out_dim: int, grid: SplineGrid, seed: int) -> KanLayer:
    """omega starts at 1 and coeffs at Normal(0, 0.1^2), so each edge begins
    as silu plus a small spline perturbation."""
    dtype = get_default_dtype()
    omega = Tensor(np.ones((out_dim, in_dim), dtype=dtype), requires_grad=True)
    coeffs = Tensor(
        normal_array(seed, (out_dim, in_dim, grid.basis_count), std=0.1, dtype=dtype),
        requires_grad=True,
    )
    return KanLayer(in_dim, out_dim, grid, omega, coeffs)


def _silu_and_grad(x: np.ndarray):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    sig = out
    return x * sig, sig * (1.0 + x * (1.0 - sig))


def kan_apply(x: Tensor, omega: Tensor, coeffs: Tensor, grid: SplineGrid) -> Tensor:
    """Evaluate an edge table at x; differentiable in x, omega, coeffs.

    Shape forms: scalar edge (x (), omega (), coeffs (M,)) -> scalar;
    layer (x (in,) or (n, in), omega (out, in), coeffs (out, in, M)) ->
    (out,) or (n, out).
    """
    m = grid.basis_count
    if omega.shape == () and coeffs.shape == (m,):
        out_dim, in_dim = 1, 1
        if x.shape != ():
            raise ShapeError(f"scalar edge needs scalar x, got shape {x.shape}")
    elif omega.data.ndim == 2 and coeffs.shape == omega.shape + (m,):
        out_dim, in_dim = omega.shape
    else:
        raise ShapeError(f"inconsistent edge tables: omega {omega.shape}, coeffs {coeffs.shape}")

    if x.shape == ():
        if (out_dim, in_dim) != (1, 1):
            raise ShapeError(f"scalar x only fits a 1x1 edge table, not {out_dim}x{in_dim}")
        batch, squeeze = 1, "scalar"
    elif x.shape == (in_dim,):
        batch, squeeze = 1, "vector"
    elif x.data.ndim == 2 and x.shape[1] == in_dim:
        batch, squeeze = x.shape[0], "none"
    else:
        raise ShapeError(f"input shape {x.shape} does not match edge table width {in_dim}")

    xb = x.data.reshape(batch, in_dim)
    om = omega.data.reshape(out_dim, in_dim)
    cf = coeffs.data.reshape(out_dim, in_dim, m)
    knots = grid.knots.astype(xb.dtype)

    bmat, dbmat = _basis_matrices(xb.reshape(-1), grid, knots)
    bmat = bmat.reshape(batch, in_dim, m)
    dbmat = dbmat.reshape(batch, in_dim, m)
    s, ds = _silu_and_grad(xb)

    wc = (om[:, :, None] * cf).reshape(out_dim, in_dim * m)
    y = s @ om.T + bmat.reshape(batch, in_dim * m) @ wc.T

    if squeeze == "scalar":
        out_data = y.reshape(())
    elif squeeze == "vector":
        out_data = y.reshape(out_dim)
    else:
        out_data = y
    out = Tensor._from_op(out_data, (x, omega, coeffs), "kan_apply")

    def backward():
        g = out.grad.reshape(batch, out_dim)
        if omega.requires_grad or coeffs.requires_grad:
            dwc = (g.T @ bmat.reshape(batch, in_dim * m)).reshape(out_dim, in_dim, m)
            if omega.requires_grad:
                d_om = g.T @ s + np.einsum("oim,oim->oi", dwc, cf)
                omega.accumulate_grad(d_om.reshape(omega.shape))
            if coeffs.requires_grad:
                coeffs.accumulate_grad((dwc * om[:, :, None]).reshape(coeffs.shape))
        if x.requires_grad:
            base = (g @ om) * ds
            spline = np.einsum("no,oim,nim->ni", g, om[:, :, None] * cf, dbmat)
            x.accumulate_grad((base + spline).reshape(x.shape))

    out._backward = backward if out._parents else None
    return out


def kan_edge_eval(x: Tensor, edge: KanEdge, grid: SplineGrid) -> Tensor:
    """Single-edge evaluation: omega * (silu(x) + spline(x)) at scalar x."""
    return kan_apply(x, edge.omega, edge.coeffs, grid)


def kan_layer_forward(x: Tensor, layer: KanLayer) -> Tensor:
    """out[j] = sum_i edge_{j,i}(x[i]); accepts (in,) or a (n, in) batch."""
    return kan_apply(x, layer.omega, layer.coeffs, layer.grid)


@dataclass
class HeadConfig:
    kind: str = "kan"  # kan | dense
    in_dim: int = 1024
    hidden_dim: int = 1024
    out_dim: int = 3
    grid_min: float = -2.0
    grid_max: float = 2.0
    grid_intervals: int = 5
    spline_order: int = 3

    def __post_init__(self):
        if self.kind not in ("kan", "dense"):
            raise ValueError(f"head kind must be 'kan' or 'dense', got {self.kind!r}")
        if min(self.in_dim, self.hidden_dim, self.out_dim) < 1:
            raise ValueError("head dimensions must be positive")

    def grid(self) -> SplineGrid:
        return SplineGrid(self.grid_min, self.grid_max, self.grid_intervals, self.spline_order)


class KanHead:
    kind = "kan"

    def __init__(self, config: HeadConfig, layer1: KanLayer, layer2: KanLayer):
        self.config = config
        self.layer1 = layer1
        self.layer2 = layer2

    def parameters(self):
        return [(f"layer1.{n}", t) for n, t in self.layer1.parameters()] + [
            (f"layer2.{n}", t) for n, t in self.layer2.parameters()
        ]


class DenseHead:
    kind = "dense"

    def __init__(self, config: HeadConfig, W: Tensor, b: Tensor):
        self.config = config
        self.W = W  # (out, in)
        self.b = b  # (out,)

    def parameters(self):
        return [("W", self.W), ("b", self.b)]


def init_head(config: HeadConfig, seed: int):
    rng = SplitMix64(seed)
    dtype = get_default_dtype()
    if config.kind == "kan":
        grid = config.grid()
        layer1 = init_kan_layer(config.in_dim, config.hidden_dim, grid, rng.next_u64())
        layer2 = init_kan_layer(config.hidden_dim, config.out_dim, grid, rng.next_u64())
        return KanHead(config, layer1, layer2)
    bound = float(np.sqrt(6.0 / (config.in_dim + config.out_dim)))
    w = uniform_array(rng.next_u64(), (config.out_dim, config.in_dim), -bound, bound, dtype)
    return DenseHead(config, Tensor(w, requires_grad=True),
                     Tensor(np.zeros(config.out_dim, dtype=dtype), requires_grad=True))


def dense_affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ W.T + b for (in,) or (n, in) inputs; the pre-replacement baseline."""
    if x.shape == (w.shape[1],):
        single = True
        y = w.data @ x.data + b.data
    elif x.data.ndim == 2 and x.shape[1] == w.shape[1]:
        single = False
        y = x.data @ w.data.T + b.data
    else:
        raise ShapeError(f"input {x.shape} does not match weight {w.shape}")
    out = Tensor._from_op(y, (x, w, b), "dense_affine")

    def backward():
        g = out.grad.reshape(-1, w.shape[0])
        xb = x.data.reshape(-1, w.shape[1])
        if w.requires_grad:
            w.accumulate_grad(g.T @ xb)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad((g @ w.data).reshape(x.shape))

    out._backward = backward if out._parents else None
    return out


def kan_head_forward(x: Tensor, head: KanHead) -> Tensor:
    """Two stacked edge-table layers: in -> hidden -> out logits."""
    if head.kind != "kan":
        raise ValueError(f"kan_head_forward needs a kan head, got kind {head.kind!r}")
    return kan_layer_forward(kan_layer_forward(x, head.layer1), head.layer2)


def dense_head_forward(x: Tensor, head: DenseHead) -> Tensor:
    if head.kind != "dense":
        raise ValueError(f"dense_head_forward needs a dense head, got kind {head.kind!r}")
    return dense_affine(x, head.W, head.b)


def head_forward(x: Tensor, head) -> Tensor:
    return kan_head_forward(x, head) if head.kind == "kan" else dense_head_forward(x, head)


def param_count(head) -> int:
    """Exact learnable-scalar count: 1 + G + k per KAN edge, in*out + out
    for the dense baseline."""
    if isinstance(head, KanLayer):
        return head.in_dim * head.out_dim * (1 + head.grid.basis_count)
    if isinstance(head, KanHead):
        return param_count(head.layer1) + param_count(head.layer2)
    if isinstance(head, DenseHead):
        out_dim, in_dim = head.W.shape
        return in_dim * out_dim + out_dim
    raise TypeError(f"param_count does not understand {type(head).__name__}")

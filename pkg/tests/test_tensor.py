import numpy as np
import pytest

from klcbl.tensor import (
    GradTape,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    check_gradients,
    concat,
    elementwise,
    matmul,
    no_grad,
    precision,
    row,
    stack,
)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def _matmul_oracle(a, b):
    # independent triple-loop product
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self, f64):
        m = Tensor([[3.0, -1.0], [2.0, 5.0]])
        eye = Tensor(np.eye(2))
        assert np.array_equal(matmul(eye, m).data, m.data)

    def test_zero(self, f64):
        z = Tensor(np.zeros((2, 3)))
        b = Tensor(np.arange(12.0).reshape(3, 4))
        assert np.array_equal(matmul(z, b).data, np.zeros((2, 4)))

    def test_random_vs_loop_oracle(self, f64):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3))
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.allclose(got, _matmul_oracle(a, b), atol=1e-12)

    def test_matvec(self, f64):
        rng = np.random.default_rng(8)
        w = rng.normal(size=(4, 3))
        x = rng.normal(size=3)
        assert np.allclose(matmul(Tensor(w), Tensor(x)).data, w @ x)

    def test_shape_error_names_both(self, f64):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestElementwise:
    def test_sigmoid_at_zero(self, f64):
        out = elementwise("sigmoid", Tensor(np.zeros(5)))
        assert np.allclose(out.data, 0.5)

    def test_tanh_at_zero(self, f64):
        out = elementwise("tanh", Tensor(np.zeros(5)))
        assert np.array_equal(out.data, np.zeros(5))

    def test_add_vs_pointwise_oracle(self, f64):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(4, 5))
        got = elementwise("add", Tensor(a), Tensor(b)).data
        expect = np.array([[a[i, j] + b[i, j] for j in range(5)] for i in range(4)])
        assert np.array_equal(got, expect)

    def test_unknown_kind(self, f64):
        with pytest.raises(ValueError, match="unknown op_kind"):
            elementwise("softplus", Tensor([1.0]))

    def test_no_implicit_broadcast(self, f64):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros(3))

    def test_scalar_broadcast_allowed(self, f64):
        out = Tensor(np.ones((2, 2))) * 3.0
        assert np.array_equal(out.data, 3.0 * np.ones((2, 2)))

    def test_scalar_tensor_broadcast(self, f64):
        s = Tensor(np.asarray(2.0))
        out = elementwise("mul", Tensor(np.ones(3)), s)
        assert np.array_equal(out.data, 2.0 * np.ones(3))


class TestConcat:
    def test_fusion_width(self, f64):
        parts = [Tensor(np.zeros(768)), Tensor(np.zeros(128)), Tensor(np.zeros(128))]
        assert concat(parts).shape == (1024,)

    def test_single_part_identity(self, f64):
        v = Tensor([1.0, 2.0])
        assert np.array_equal(concat([v]).data, v.data)

    def test_order_preserved(self, f64):
        out = concat([Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
        assert np.array_equal(out.data, [1.0, 2.0, 3.0, 4.0])

    def test_incompatible_shapes(self, f64):
        with pytest.raises(ShapeError):
            concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)

    def test_backward_splits(self, f64):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        w = Tensor([10.0, 20.0, 30.0])
        loss = (concat([a, b]) * w).sum()
        backward(loss)
        assert np.array_equal(a.grad, [10.0, 20.0])
        assert np.array_equal(b.grad, [30.0])


class TestBackward:
    def test_sum_gives_ones(self, f64):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x.sum())
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square_sum_analytic(self, f64):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((x * x).sum())
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_composite_matches_finite_differences(self, f64):
        def f(t):
            return ((t * t).tanh() + t.sigmoid()).sum()

        x = Tensor(np.random.default_rng(3).normal(size=7))
        assert check_gradients(f, x) < 1e-6

    def test_non_scalar_loss_rejected(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            backward(x * x)

    def test_untracked_loss_rejected(self, f64):
        with pytest.raises(ValueError, match="tape"):
            backward(Tensor(np.asarray(1.0)).sum())

    def test_accumulation_across_calls(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward((x * x).sum())
        backward((x * x).sum())
        assert np.allclose(x.grad, [4.0, 8.0])

    def test_linearity_of_losses(self, f64):
        rng = np.random.default_rng(5)
        base = rng.normal(size=4)

        x = Tensor(base.copy(), requires_grad=True)
        backward(((x * x).sum() + x.tanh().sum()))
        combined = x.grad.copy()

        x1 = Tensor(base.copy(), requires_grad=True)
        backward((x1 * x1).sum())
        x2 = Tensor(base.copy(), requires_grad=True)
        backward(x2.tanh().sum())
        assert np.allclose(combined, x1.grad + x2.grad, atol=1e-12)

    def test_shared_subexpression_fanout(self, f64):
        # y used twice: gradients from both uses must add
        x = Tensor([2.0], requires_grad=True)
        y = x * 3.0
        backward((y * y + y).sum())
        # d/dx (9x^2 + 3x) = 18x + 3
        assert np.allclose(x.grad, [39.0])


class TestGradTape:
    def test_topological_order(self, f64):
        x = Tensor([1.0], requires_grad=True)
        y = x * 2.0
        z = y + x
        loss = z.sum()
        tape = GradTape(loss)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                assert pos[id(parent)] < pos[id(node)]

    def test_each_op_once(self, f64):
        x = Tensor([1.0], requires_grad=True)
        y = x * 2.0
        loss = (y * y).sum()
        tape = GradTape(loss)
        assert len(tape.ops) == len({id(n) for n in tape.ops})


class TestCheckGradients:
    def test_quadratic_is_nearly_exact(self, f64):
        x = Tensor(np.random.default_rng(0).normal(size=5))
        assert check_gradients(lambda t: (t * t).sum(), x) < 1e-8

    def test_sigmoid_sum(self, f64):
        x = Tensor(np.random.default_rng(1).normal(size=6))
        assert check_gradients(lambda t: t.sigmoid().sum(), x) < 1e-6

    def test_rejects_bad_eps(self, f64):
        with pytest.raises(ValueError):
            check_gradients(lambda t: t.sum(), Tensor([1.0]), eps=0.0)

    def test_rejects_nonscalar_f(self, f64):
        with pytest.raises(ShapeError):
            check_gradients(lambda t: t * t, Tensor([1.0]))


class TestNumericGuards:
    def test_exp_overflow_is_an_error(self, f64):
        with pytest.raises(NumericError):
            Tensor([1000.0]).exp()

    def test_log_of_zero_is_an_error(self, f64):
        with pytest.raises(NumericError):
            Tensor([0.0]).log()

    def test_sigmoid_extreme_inputs_stay_finite(self, f64):
        out = Tensor([-1e4, 1e4]).sigmoid()
        assert np.allclose(out.data, [0.0, 1.0])

    def test_silu_extreme_inputs_stay_finite(self, f64):
        out = Tensor([-1e4, 1e4]).silu()
        assert np.allclose(out.data, [0.0, 1e4])


class TestDeterminismAndMisc:
    def test_bit_identical_reruns(self, f64):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        r1 = matmul(Tensor(a), Tensor(b)).tanh().data
        r2 = matmul(Tensor(a), Tensor(b)).tanh().data
        assert np.array_equal(r1, r2)

    def test_no_grad_blocks_recording(self, f64):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert y._backward is None and not y.requires_grad

    def test_stack_and_row_roundtrip(self, f64):
        rows = [Tensor([1.0, 2.0], requires_grad=True), Tensor([3.0, 4.0], requires_grad=True)]
        m = stack(rows)
        assert m.shape == (2, 2)
        r1 = row(m, 1)
        backward((r1 * r1).sum())
        assert np.allclose(rows[1].grad, [6.0, 8.0])
        assert np.allclose(rows[0].grad, 0.0)

    def test_mixed_dtype_rejected(self):
        a = Tensor([1.0], dtype=np.float32)
        b = Tensor([1.0], dtype=np.float64)
        with pytest.raises(ValueError, match="dtype"):
            a + b


def test_per_op_gradients_ten_seeds(f64):
    # every differentiable op, 10 seeds each, relative error < 1e-6 in f64
    unary = ["tanh", "sigmoid", "silu", "relu", "exp"]
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=6)
        x = np.where(np.abs(x) < 1e-2, x + 0.05, x)  # keep clear of the relu kink
        for kind in unary:
            err = check_gradients(lambda t, k=kind: elementwise(k, t).sum(), Tensor(x.copy()))
            assert err < 1e-6, (kind, seed, err)
        err = check_gradients(lambda t: (t.exp() + 1.0).log().sum(), Tensor(x.copy()))
        assert err < 1e-6

        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        err = check_gradients(lambda t: matmul(t, Tensor(b)).tanh().sum(), Tensor(a.copy()))
        assert err < 1e-6
        err = check_gradients(lambda t: matmul(Tensor(a), t).tanh().sum(), Tensor(b.copy()))
        assert err < 1e-6

        v = rng.normal(size=5)
        w = Tensor(rng.normal(size=10))
        err = check_gradients(lambda t: (concat([t, t * 2.0]) * w).sum(), Tensor(v.copy()))
        assert err < 1e-6


def test_f32_profile_gradients_ten_seeds():
    # the 32-bit profile carries a looser tolerance: rel err < 1e-3
    with precision(np.float32):
        for seed in range(10):
            rng = np.random.default_rng(500 + seed)
            x = rng.normal(size=6).astype(np.float32)
            err = check_gradients(lambda t: (t.sigmoid() * t.tanh()).sum(), Tensor(x.copy()), eps=1e-3)
            assert err < 1e-3, (seed, err)
            a = rng.normal(size=(3, 4)).astype(np.float32)
            b = Tensor(rng.normal(size=(4, 2)).astype(np.float32))
            err = check_gradients(lambda t: matmul(t, b).tanh().sum(), Tensor(a.copy()), eps=1e-3)
            assert err < 1e-3, (seed, err)

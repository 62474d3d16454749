import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from naln import tensor as tc
from naln.errors import ContractError, DegenerateInputError, ShapeError
from oracles import central_difference

T = tc.Tensor


def leaf(x):
    return T(np.asarray(x, dtype=np.float64), requires_grad=True)


def grad_of(fn, *inputs):
    ts = [leaf(x) for x in inputs]
    tc.backward(fn(*ts))
    return [t.grad for t in ts]


def numeric_grad(fn, *inputs, index=0, h=1e-5):
    arrs = [np.array(x, dtype=np.float64) for x in inputs]

    def f():
        with tc.no_grad():
            return fn(*[T(a) for a in arrs]).item()

    return central_difference(f, arrs[index], h)


def rel_err(a, n):
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return np.abs(a - n).max() / scale


class TestMatmul:
    def test_identity(self):
        out = tc.matmul(T(np.eye(2)), T([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_hand_expansion(self):
        np.testing.assert_array_equal(tc.matmul(T([[1.0, 2.0]]), T([[3.0], [4.0]])).data, [[11.0]])

    def test_zero_annihilates(self, rng):
        a = rng.standard_normal((3, 5))
        assert not tc.matmul(T(a), T(np.zeros((5, 2)))).data.any()

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            tc.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))

    def test_rank_one_rejected(self):
        with pytest.raises(ShapeError):
            tc.matmul(T(np.ones(3)), T(np.ones((3, 2))))

    def test_gradients(self, rng):
        a, b = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))

        def fn(x, y):
            return tc.tanh(tc.matmul(x, y)).sum()

        ga, gb = grad_of(fn, a, b)
        assert rel_err(ga, numeric_grad(fn, a, b, index=0)) < 1e-6
        assert rel_err(gb, numeric_grad(fn, a, b, index=1)) < 1e-6

    def test_shared_left_operand_gradient(self, rng):
        # a 2-D left operand broadcast over a stack of right operands
        a, b = rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (4, 3, 5))

        def fn(x, y):
            return tc.tanh(tc.matmul(x, y)).sum()

        ga, gb = grad_of(fn, a, b)
        assert ga.shape == a.shape and gb.shape == b.shape
        assert rel_err(ga, numeric_grad(fn, a, b, index=0)) < 1e-6
        assert rel_err(gb, numeric_grad(fn, a, b, index=1)) < 1e-6


class TestConvolutions:
    def test_delta_kernel(self):
        out = tc.conv_temporal(T([[1.0, 2.0, 3.0]]), T(np.ones((1, 1, 1))))
        np.testing.assert_array_equal(out.data, [[1, 2, 3]])

    def test_valid_correlation(self):
        out = tc.conv_temporal(T([[1.0, 2.0, 3.0]]), T(np.ones((1, 1, 2))))
        np.testing.assert_array_equal(out.data, [[3, 5]])

    def test_zero_kernel(self, rng):
        out = tc.conv_temporal(T(rng.standard_normal((3, 10))), T(np.zeros((2, 1, 4))))
        assert out.shape == (6, 7) and not out.data.any()

    def test_kernel_too_wide(self):
        with pytest.raises(ShapeError):
            tc.conv_temporal(T(np.ones((2, 3))), T(np.ones((1, 1, 4))))

    def test_row_layout_and_stride(self, rng):
        x = rng.standard_normal((3, 11))
        k = rng.standard_normal((2, 1, 3))
        out = tc.conv_temporal(T(x), T(k), stride=2).data
        for f in range(2):
            for c in range(3):
                ref = [x[c, t:t + 3] @ k[f, 0] for t in range(0, 11 - 3 + 1, 2)]
                np.testing.assert_allclose(out[f * 3 + c], ref, rtol=1e-13, atol=1e-13)

    def test_spatial_identity(self, rng):
        x = rng.standard_normal((1, 6))
        np.testing.assert_array_equal(tc.conv_spatial(T(x), T(np.ones((1, 1, 1)))).data, x)

    def test_spatial_column_sums(self):
        out = tc.conv_spatial(T([[1.0, 2.0], [3.0, 4.0]]), T(np.ones((1, 2, 1))))
        np.testing.assert_array_equal(out.data, [[4, 6]])

    def test_spatial_cancellation(self):
        out = tc.conv_spatial(T([[2.0, 5.0], [2.0, 5.0]]), T(np.array([[[1.0], [-1.0]]])))
        assert not out.data.any()

    def test_spatial_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.conv_spatial(T(np.ones((3, 4))), T(np.ones((1, 2, 1))))

    def test_conv_gradients(self, rng):
        x = rng.uniform(-1, 1, (2, 2, 9))
        k = rng.uniform(-1, 1, (3, 1, 4))

        def fn(a, b):
            return tc.elu(tc.conv_temporal(a, b, stride=2)).sum()

        gx, gk = grad_of(fn, x, k)
        assert rel_err(gx, numeric_grad(fn, x, k, index=0)) < 1e-6
        assert rel_err(gk, numeric_grad(fn, x, k, index=1)) < 1e-6

    def test_avg_pool_drops_tail(self):
        out = tc.avg_pool(T([[1.0, 3.0, 5.0, 7.0, 100.0]]), 2)
        np.testing.assert_array_equal(out.data, [[2.0, 6.0]])


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(tc.elementwise(T([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])

    def test_elu_fixed_point(self):
        assert tc.elementwise(T([0.0]), "elu").data[0] == 0.0

    def test_tanh_slope_at_zero(self):
        (g,) = grad_of(lambda x: tc.tanh(x).sum(), [0.0])
        num = numeric_grad(lambda x: tc.tanh(x).sum(), [0.0])
        assert g[0] == pytest.approx(1.0, abs=1e-12)
        assert num[0] == pytest.approx(1.0, abs=1e-9)

    def test_log_clamped(self):
        assert np.isfinite(tc.log(T([0.0, -1.0])).data).all()

    def test_exp_clamped(self):
        assert np.isfinite(tc.exp(T([1e4])).data).all()

    @pytest.mark.parametrize("name,args", [("elu", ()), ("relu", ()), ("tanh", ()), ("negate", ()),
                                           ("scale", (1.7,)), ("exp", ()), ("log", ()),
                                           ("add", (0.3,)), ("sub", (0.3,)), ("mul", (-2.0,))])
    def test_gradient_fidelity(self, rng, name, args):
        x = rng.uniform(-1, 1, 7)
        if name == "log":
            x = np.abs(x) + 0.1
        if name == "relu":
            x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink

        def fn(t):
            return tc.mul(tc.elementwise(t, name, *args), T(np.arange(1.0, 8.0))).sum()

        (g,) = grad_of(fn, x)
        assert rel_err(g, numeric_grad(fn, x)) < 1e-4


class TestCosine:
    def test_self(self):
        assert tc.cosine_similarity_matrix(T([[1.0, 0.0]]), T([[1.0, 0.0]])).item() == 1.0

    def test_orthogonal(self):
        assert tc.cosine_similarity_matrix(T([[1.0, 0.0]]), T([[0.0, 1.0]])).item() == 0.0

    def test_diagonal(self):
        v = tc.cosine_similarity_matrix(T([[1.0, 1.0]]), T([[1.0, 0.0]])).item()
        assert v == pytest.approx(0.70710678, abs=1e-8)

    def test_zero_row(self):
        with pytest.raises(DegenerateInputError):
            tc.cosine_similarity_matrix(T([[0.0, 0.0]]), T([[1.0, 0.0]]))

    @given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)), arrays(np.float64, (5, 3), elements=st.floats(-5, 5)))
    def test_bounded_and_transposed(self, W, V):
        if (np.linalg.norm(W, axis=1) < 1e-3).any() or (np.linalg.norm(V, axis=1) < 1e-3).any():
            return
        S = tc.cosine_similarity_matrix(T(W), T(V)).data
        assert np.all(np.abs(S) <= 1.0)
        np.testing.assert_allclose(S, tc.cosine_similarity_matrix(T(V), T(W)).data.T, atol=1e-15)

    def test_gradient(self, rng):
        W, V = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (2, 4))
        wts = T(rng.standard_normal((3, 2)))

        def fn(a, b):
            return tc.mul(tc.cosine_similarity_matrix(a, b), wts).sum()

        gw, gv = grad_of(fn, W, V)
        assert rel_err(gw, numeric_grad(fn, W, V, index=0)) < 1e-6
        assert rel_err(gv, numeric_grad(fn, W, V, index=1)) < 1e-6


class TestBackward:
    def test_identity_loss(self):
        (g,) = grad_of(lambda x: x.sum(), [2.5])
        assert g[0] == 1.0

    def test_square(self):
        (g,) = grad_of(lambda x: tc.mul(x, x).sum(), [3.0])
        num = numeric_grad(lambda x: tc.mul(x, x).sum(), [3.0])
        assert g[0] == 6.0 and num[0] == pytest.approx(6.0, abs=1e-8)

    def test_non_scalar(self):
        with pytest.raises(ContractError):
            tc.backward(tc.scale(leaf([1.0, 2.0]), 2.0))

    def test_shared_subexpression_accumulates(self):
        x = leaf([2.0])
        y = tc.mul(x, x)
        tc.backward(tc.add(y, y).sum())  # d/dx 2x^2 = 4x
        assert x.grad[0] == 8.0

    def test_tape_topological(self):
        x = leaf(np.ones((2, 2)))
        loss = tc.tanh(tc.matmul(x, x)).sum()
        tape = tc.Tape.record(loss)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for n in tape.nodes:
            for p in n._parents:
                assert pos[id(p)] < pos[id(n)]
        assert len({id(n) for n in tape.nodes}) == len(tape)

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with tc.no_grad():
            y = tc.exp(x)
        assert not y.requires_grad

    def test_log_softmax_gradient(self, rng):
        x = rng.uniform(-1, 1, (3, 4))
        wts = T(rng.standard_normal((3, 4)))
        for axis in (0, 1):
            def fn(a):
                return tc.mul(tc.log_softmax(a, axis=axis), wts).sum()

            (g,) = grad_of(fn, x)
            assert rel_err(g, numeric_grad(fn, x)) < 1e-6

    def test_determinism(self, rng):
        x = rng.standard_normal((4, 5))
        a = tc.tanh(tc.matmul(T(x), T(x.T))).data
        b = tc.tanh(tc.matmul(T(x), T(x.T))).data
        assert a.tobytes() == b.tobytes()


class TestGradcheckHelper:
    def test_matches_square(self):
        x = leaf([0.3, -0.7])
        errs = tc.gradcheck(lambda: tc.mul(x, x).sum(), {"x": x})
        assert errs["x"] < 1e-8

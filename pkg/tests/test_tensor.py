import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossview import tensor as T
from crossview.errors import ContractError, DimensionError, NumericError
from crossview.gradcheck import finite_diff_check
from crossview.tensor import Tensor


def naive_matmul(a, b):
    r, k = a.shape
    c = b.shape[1]
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self, double):
        b = np.array([[3.0, 1.0], [2.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), Tensor(b))
        np.testing.assert_array_equal(out.data, b)

    def test_row_times_column(self, double):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_against_triple_loop(self, double, rng):
        a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_shapes_up_to_32(self, double, seed):
        g = np.random.default_rng(seed)
        r, k, c = g.integers(1, 33, size=3)
        a, b = g.standard_normal((r, k)), g.standard_normal((k, c))
        ref = naive_matmul(a, b)
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)) <= 1e-12

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_formulas(self, double, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        T.matmul(a, b).sum().backward()
        dc = np.ones((3, 2))
        np.testing.assert_allclose(a.grad, dc @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ dc)

    def test_batched_broadcast_gradient(self, double, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)))
        b = Tensor(rng.standard_normal((4, 5)))
        assert finite_diff_check(lambda x, y: T.matmul(x, y).sum(), [a, b]) <= 1e-4


class TestSoftmax:
    def test_uniform_row(self, double):
        np.testing.assert_allclose(T.softmax(Tensor(np.full(4, 2.0))).data, 0.25)

    def test_closed_form(self, double):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], rtol=1e-15)

    def test_large_entry_no_overflow(self, double):
        x = np.zeros(5)
        x[2] = 1000.0
        y = T.softmax(Tensor(x)).data
        # extended-precision oracle: exp(-1000) / (1 + 4 exp(-1000)) underflows to 0 in double too
        ext = np.exp(np.array(x - 1000.0, dtype=np.longdouble))
        ref = ext / ext.sum()
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, ref.astype(np.float64), atol=1e-300)
        assert y[2] == 1.0

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            T.softmax(Tensor([0.0, np.inf]))

    def test_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.ones((2, 2))), axis=2)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)), elements=st.floats(-500, 500)),
        st.sampled_from([0, 1, -1]),
    )
    def test_rows_sum_to_one(self, x, axis):
        y = T.softmax(Tensor(x), axis=axis).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-6)


class TestElementwise:
    def test_relu(self):
        assert T.elementwise("relu", Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_add_zero_identity(self, rng):
        x = Tensor(rng.standard_normal(6))
        np.testing.assert_array_equal(T.elementwise("add", x, 0.0).data, x.data)

    def test_mul_product_rule(self, double):
        a, b = Tensor(3.0, requires_grad=True), Tensor(5.0, requires_grad=True)
        T.elementwise("mul", a, b).backward()
        assert (a.grad.item(), b.grad.item()) == (5.0, 3.0)

    def test_scale_and_sub(self, double):
        x = Tensor([1.0, 2.0])
        assert T.elementwise("scale", x, 3.0).data.tolist() == [3.0, 6.0]
        assert T.elementwise("sub", x, x).data.tolist() == [0.0, 0.0]

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            T.elementwise("div", Tensor(1.0), Tensor(2.0))


class TestBackward:
    def test_sum_gives_ones(self, double):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares(self, double):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        assert x.grad.tolist() == [2.0, 4.0]

    def test_non_scalar_output_rejected(self):
        with pytest.raises(ContractError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_diamond_graph_visits_once(self, double):
        x = Tensor([1.5], requires_grad=True)
        y = x * 2.0
        (y * y + y).sum().backward()  # d/dx (4x^2 + 2x) = 8x + 2
        assert x.grad.tolist() == [14.0]

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert y.is_leaf and not y.requires_grad

    def test_deterministic_across_runs(self, double):
        def run():
            g = np.random.default_rng(7)
            a = Tensor(g.standard_normal((6, 5)), requires_grad=True)
            b = Tensor(g.standard_normal((5, 4)), requires_grad=True)
            T.mul(T.softmax(T.matmul(a, b), axis=-1), Tensor(g.standard_normal((6, 4)))).sum().backward()
            return a.grad.tobytes(), b.grad.tobytes()

        assert run() == run()

    def test_reshape_transpose_concat_getitem(self, double, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)))
        y = Tensor(rng.standard_normal((2, 3, 4)))
        w = Tensor(rng.standard_normal((2, 6, 4)))

        def f(a, b):
            c = T.concat([a, T.transpose(b, (0, 1, 2))], axis=1)
            return T.mul(T.reshape(c, (2, 6, 4)), w)[:, 1:5].sum()

        assert finite_diff_check(f, [x, y]) <= 1e-4

    def test_dropout_inverted_scaling(self, double):
        x = Tensor(np.ones(10000))
        y = T.dropout(x, 0.25, np.random.default_rng(0), training=True).data
        assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
        assert abs(y.mean() - 1.0) < 0.03
        assert T.dropout(x, 0.25, None, training=False) is x


class TestFiniteDiffCheck:
    def test_sum_of_squares(self, double, rng):
        x = Tensor(rng.standard_normal(7))
        assert finite_diff_check(lambda t: (t * t).sum(), x, eps=1e-5) <= 1e-8

    def test_softmax_then_sum_zero_gradient(self, double, rng):
        # the function is constant; eps is not pinned for this case, 1e-4 keeps
        # extended-precision round-off well below the 1e-8 relative floor
        x = Tensor(rng.standard_normal((3, 5)))
        assert finite_diff_check(lambda t: T.softmax(t, axis=-1).sum(), x, eps=1e-4) <= 1e-6

    def test_detects_wrong_gradient(self, double, rng):
        def bad_square(t):
            return T.make_node(t.data**2, (t,), lambda g: (g * 3 * t.data,), "bad")

        assert finite_diff_check(lambda t: bad_square(t).sum(), Tensor(rng.standard_normal(4))) > 0.1

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize(
        "name,fn",
        [
            ("matmul", lambda a, b: T.matmul(a, b)),
            ("softmax", lambda a, b: T.mul(T.softmax(a, axis=-1), b)),
            ("add", lambda a, b: T.add(a, T.reshape(b, a.shape))),
            ("mul", lambda a, b: T.mul(a, T.reshape(b, a.shape))),
            ("sub", lambda a, b: T.sub(a, T.reshape(b, a.shape))),
            ("relu", lambda a, b: T.mul(T.relu(a), T.reshape(b, a.shape))),
            ("scale", lambda a, b: T.mul(T.scale(a, -2.5), T.reshape(b, a.shape))),
        ],
    )
    def test_ops_match_central_differences(self, double, name, fn, seed):
        g = np.random.default_rng(seed)
        a = Tensor(g.standard_normal((3, 4)))
        b = Tensor(g.standard_normal((4, 3)) if name == "matmul" else g.standard_normal((3, 4)))
        out_shape = fn(a, b).shape
        probe = Tensor(np.cos(np.arange(np.prod(out_shape))).reshape(out_shape))
        err = finite_diff_check(lambda x, y: T.mul(fn(x, y), probe).sum(), [a, b], eps=1e-5)
        assert err <= 1e-4, name

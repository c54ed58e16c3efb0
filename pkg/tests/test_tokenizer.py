import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossview.attention import QKV, scaled_dot_attention
from crossview.errors import DimensionError
from crossview.gradcheck import finite_diff_check, module_diff_check
from crossview.tensor import Tensor, count_macs, precision
from crossview.tokenizer import TOKEN_PRESETS, Tokenizer, tokenize, tokenize_recurrent, tokenize_static


def loop_softmax_pool(X, logits):
    """Per-element oracle: spatial softmax of each logit column, then weighted pixel sum."""
    m, L = logits.shape
    f = X.shape[1]
    T = np.zeros((L, f))
    for l in range(L):
        mx = max(logits[i, l] for i in range(m))
        e = [np.exp(logits[i, l] - mx) for i in range(m)]
        z = sum(e)
        for j in range(f):
            T[l, j] = sum(e[i] / z * X[i, j] for i in range(m))
    return T


def loop_matmul(a, b):
    return np.array([[sum(a[i, k] * b[k, j] for k in range(a.shape[1])) for j in range(b.shape[1])] for i in range(a.shape[0])])


def zero_tokenizer(f, L):
    tok = Tokenizer(f, L)
    for p in tok.parameters():
        p.data[:] = 0
    return tok


class TestStatic:
    def test_zero_weights_give_column_mean(self, double, rng):
        X = rng.standard_normal((1, 6, 4))
        T = tokenize_static(Tensor(X), Tensor(np.zeros((4, 3)))).tokens.data
        np.testing.assert_allclose(T[0], np.tile(X[0].mean(axis=0), (3, 1)), atol=1e-12)

    def test_single_pixel(self, double, rng):
        X = rng.standard_normal((1, 1, 4))
        T = tokenize_static(Tensor(X), Tensor(rng.standard_normal((4, 5)))).tokens.data
        np.testing.assert_allclose(T[0], np.tile(X[0, 0], (5, 1)), atol=1e-12)

    def test_loop_oracle(self, double, rng):
        X, W = rng.standard_normal((6, 4)), rng.standard_normal((4, 3))
        got = tokenize_static(Tensor(X[None]), Tensor(W)).tokens.data[0]
        np.testing.assert_allclose(got, loop_softmax_pool(X, loop_matmul(X, W)), atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tokenize_static(Tensor(np.ones((1, 6, 4))), Tensor(np.ones((5, 3))))


class TestRecurrent:
    def test_zero_weights_ignore_previous_tokens(self, double, rng):
        X = rng.standard_normal((1, 7, 4))
        T = tokenize_recurrent(Tensor(X), Tensor(rng.standard_normal((1, 3, 4))), Tensor(np.zeros((4, 4)))).tokens.data
        np.testing.assert_allclose(T[0], np.tile(X[0].mean(axis=0), (3, 1)), atol=1e-12)

    def test_repeated_row(self, double, rng):
        row = rng.standard_normal(4)
        X = np.tile(row, (5, 1))[None]
        T = tokenize_recurrent(Tensor(X), Tensor(rng.standard_normal((1, 3, 4))), Tensor(rng.standard_normal((4, 4))))
        np.testing.assert_allclose(T.tokens.data[0], np.tile(row, (3, 1)), atol=1e-12)

    def test_loop_oracle(self, double, rng):
        X, T_in, W = rng.standard_normal((6, 4)), rng.standard_normal((3, 4)), rng.standard_normal((4, 4))
        got = tokenize_recurrent(Tensor(X[None]), Tensor(T_in[None]), Tensor(W)).tokens.data[0]
        W_R = loop_matmul(T_in, W)
        np.testing.assert_allclose(got, loop_softmax_pool(X, loop_matmul(X, W_R.T)), atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tokenize_recurrent(Tensor(np.ones((1, 6, 4))), Tensor(np.ones((1, 3, 4))), Tensor(np.ones((3, 3))))


class TestThreeLayers:
    def test_zero_weights_every_layer(self, double, rng):
        X = rng.standard_normal((2, 9, 4))
        ts = tokenize(Tensor(X), zero_tokenizer(4, 3))
        assert len(ts.layer_tokens) == 3 and len(ts.weights) == 3
        for layer in ts.layer_tokens:
            np.testing.assert_allclose(layer.data, np.repeat(X.mean(axis=1, keepdims=True), 3, axis=1), atol=1e-12)

    def test_recurrent_matrices_distinct(self):
        tok = Tokenizer(8, 16, rng=np.random.default_rng(0))
        assert tok.W_A.shape == (8, 16)
        assert tok.W_TR_2.shape == tok.W_TR_3.shape == (8, 8)
        assert not np.array_equal(tok.W_TR_2.data, tok.W_TR_3.data)

    def test_presets(self):
        assert TOKEN_PRESETS == (16, 32, 48)

    def test_gradient_through_all_layers(self, double, rng):
        tok = Tokenizer(4, 3, rng=rng)
        X = Tensor(rng.standard_normal((2, 5, 4)))
        probe = Tensor(rng.standard_normal((2, 3, 4)))
        assert module_diff_check(tok, lambda X: (tok(X).tokens * probe).sum(), [X]) <= 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariance_and_convexity(self, seed):
        g = np.random.default_rng(seed)
        with precision(np.float64):
            tok = Tokenizer(5, 4, rng=g)
            X = g.standard_normal((1, 10, 5))
            perm = g.permutation(10)
            a = tokenize(Tensor(X), tok)
            b = tokenize(Tensor(X[:, perm]), tok)
        np.testing.assert_allclose(a.tokens.data, b.tokens.data, atol=1e-6)
        lo, hi = X.min(axis=1), X.max(axis=1)
        for layer, w in zip(a.layer_tokens, a.weights):
            assert np.all(layer.data >= lo[:, None, :] - 1e-9)
            assert np.all(layer.data <= hi[:, None, :] + 1e-9)
            assert np.all(w.data >= 0)
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-9)


def test_token_attention_costs_fewer_macs():
    n, m, L, d, f = 256, 256, 16, 32, 8
    g = np.random.default_rng(0)
    Q = Tensor(g.standard_normal((1, n, d)))

    def macs(k):
        qkv = QKV(Q, Tensor(g.standard_normal((1, k, d))), Tensor(g.standard_normal((1, k, f))))
        with count_macs() as c:
            scaled_dot_attention(qkv)
        return c["matmul"]

    pixel, token = macs(m), macs(L)
    assert pixel == n * m * d + n * m * f
    assert pixel / token >= 8

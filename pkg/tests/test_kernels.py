"""The compiled and pure-Python kernel backends must agree bit for bit."""

import numpy as np
import pytest

from crossview import kernels

needs_compiled = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")

GEOMETRIES = [
    # (h, w, kh, kw, sy, sx, py, px)
    (8, 8, 3, 3, 1, 1, 1, 1),
    (9, 7, 3, 3, 2, 2, 1, 1),
    (16, 16, 7, 7, 2, 2, 3, 3),
    (5, 6, 1, 1, 2, 2, 0, 0),
    (4, 4, 2, 3, 1, 2, 0, 1),
]


def _both(fn):
    with kernels.use_backend("python"):
        a = fn()
    with kernels.use_backend("compiled"):
        b = fn()
    return a, b


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("geom", GEOMETRIES)
def test_im2col_col2im_parity(geom, dtype):
    h, w, kh, kw, sy, sx, py, px = geom
    g = np.random.default_rng(0)
    x = g.standard_normal((2, 3, h, w)).astype(dtype)
    a, b = _both(lambda: kernels.im2col(x, kh, kw, sy, sx, py, px))
    np.testing.assert_array_equal(a, b)
    cols = g.standard_normal(a.shape).astype(dtype)
    a, b = _both(lambda: kernels.col2im(cols, 3, h, w, kh, kw, sy, sx, py, px))
    # accumulation order may differ between backends
    np.testing.assert_allclose(a, b, rtol=1e-5 if dtype == np.float32 else 1e-12, atol=1e-6)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(2, 3, 8, 8), (1, 2, 7, 5), (3, 1, 16, 16)])
def test_maxpool_parity(shape, dtype):
    g = np.random.default_rng(1)
    x = g.standard_normal(shape).astype(dtype)
    (oa, ia), (ob, ib) = _both(lambda: kernels.maxpool_forward(x, 3, 2, 1))
    np.testing.assert_array_equal(oa, ob)
    np.testing.assert_array_equal(ia, ib)
    grad = g.standard_normal(oa.shape).astype(dtype)
    a, b = _both(lambda: kernels.maxpool_backward(grad, ia, shape[2], shape[3], 3, 2, 1))
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), c> == <x, col2im(c)> for the python backend on its own
    g = np.random.default_rng(2)
    x = g.standard_normal((1, 2, 6, 5))
    with kernels.use_backend("python"):
        cols = kernels.im2col(x, 3, 3, 2, 1, 1, 1)
        c = g.standard_normal(cols.shape)
        back = kernels.col2im(c, 2, 6, 5, 3, 3, 2, 1, 1, 1)
    assert np.vdot(cols, c) == pytest.approx(np.vdot(x, back), rel=1e-12)


def test_extended_dtype_uses_numpy_backend():
    x = np.arange(16, dtype=np.longdouble).reshape(1, 1, 4, 4)
    out, _ = kernels.maxpool_forward(x, 3, 2, 1)
    assert out.dtype == np.longdouble
    assert out[0, 0].tolist() == [[5.0, 7.0], [13.0, 15.0]]


def test_unknown_backend():
    with pytest.raises(ValueError):
        with kernels.use_backend("gpu"):
            pass


def test_backend_name_reports_choice():
    assert kernels.backend_name() in ("compiled", "python")
    with kernels.use_backend("python"):
        assert kernels.backend_name() == "python"

"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

# numpy's longdouble is 80-bit extended on x86; on platforms where it aliases
# float64 the numeric side simply runs in double.
ORACLE_DTYPE = np.longdouble


def numeric_gradient(
    f: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float, extended: bool = True
) -> np.ndarray:
    """Central differences of ``f(*inputs)`` w.r.t. ``inputs[index]``."""
    dtype = ORACLE_DTYPE if extended else inputs[index].dtype
    base = [Tensor(t.data.astype(dtype)) if extended else Tensor(t.data.copy()) for t in inputs]
    target = base[index]
    flat = target.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=dtype)
    step = dtype(eps) if extended else eps
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(*base).data.sum(dtype=dtype)
            flat[i] = orig - step
            down = f(*base).data.sum(dtype=dtype)
            flat[i] = orig
            grad[i] = (up - down) / (2 * step)
    return grad.reshape(target.shape)


def analytic_gradients(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    leaves = [Tensor(t.data.copy(), requires_grad=True) for t in inputs]
    out = f(*leaves)
    out.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=ORACLE_DTYPE)
    n = np.asarray(numeric, dtype=ORACLE_DTYPE)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))


def finite_diff_check(
    f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5, extended: bool = True
) -> float:
    """Maximum relative error between backprop and central differences.

    ``f`` maps the input tensor(s) to a scalar tensor. The error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``; the maximum over
    all elements of all inputs is returned.

    The analytic side runs in the inputs' own dtype (use double). With
    ``extended=True`` the perturbed evaluations run in extended precision, which
    keeps round-off in ``f`` from dominating the difference quotient.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    analytic = analytic_gradients(f, inputs)
    worst = 0.0
    for i, a in enumerate(analytic):
        n = numeric_gradient(f, inputs, i, eps, extended=extended)
        worst = max(worst, relative_error(a, n))
    return worst


def module_diff_check(
    module, f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5, extended: bool = True
) -> float:
    """:func:`finite_diff_check` over ``inputs`` and every parameter of ``module``.

    ``f(*inputs)`` must run ``module``; its parameters are swapped for the
    checker's perturbed copies while ``f`` evaluates.
    """
    names = [name for name, _ in module.named_parameters()]
    params = [Tensor(p.data.copy(), dtype=p.dtype) for _, p in module.named_parameters()]
    k = len(inputs)

    def wrapped(*ts):
        with module.substitute(dict(zip(names, ts[k:]))):
            return f(*ts[:k])

    return finite_diff_check(wrapped, list(inputs) + params, eps=eps, extended=extended)

"""Named finite-difference checks for every differentiable operation.

Each case builds small random double-precision inputs from a seed and returns
the maximum relative error reported by :func:`~crossview.gradcheck.finite_diff_check`.
Outputs are contracted with a fixed random probe so that every output element
contributes to the checked scalar.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .attention import AttentionConfig, CrossViewTransformer, residual_combine
from .gradcheck import finite_diff_check, module_diff_check
from .losses import masked_multitask_ce, weighted_bce
from .tensor import Tensor, precision
from .tokenizer import Tokenizer

THRESHOLD = 1e-4


def _probe(g: np.random.Generator, shape) -> Tensor:
    return Tensor(g.standard_normal(shape))


def _contract(fn: Callable[..., Tensor], probe: Tensor) -> Callable[..., Tensor]:
    return lambda *xs: T.mul(fn(*xs), probe).sum()


def _binary(fn, shape_a, shape_b=None):
    def case(g, eps):
        a = Tensor(g.standard_normal(shape_a))
        b = Tensor(g.standard_normal(shape_b or shape_a))
        out = fn(a, b)
        return finite_diff_check(_contract(fn, _probe(g, out.shape)), [a, b], eps=eps)

    return case


def _unary(fn, shape, transform=None):
    def case(g, eps):
        x = g.standard_normal(shape)
        x = transform(x) if transform else x
        x = Tensor(x)
        return finite_diff_check(_contract(fn, _probe(g, fn(x).shape)), x, eps=eps)

    return case


def _conv(g, eps):
    x, w, b = Tensor(g.standard_normal((2, 2, 5, 5))), Tensor(g.standard_normal((3, 2, 3, 3))), Tensor(g.standard_normal(3))
    fn = lambda x, w, b: nn.conv2d(x, w, b, stride=2, padding=1)  # noqa: E731
    return finite_diff_check(_contract(fn, _probe(g, fn(x, w, b).shape)), [x, w, b], eps=eps)


def _conv_pointwise(g, eps):
    x, w, b = Tensor(g.standard_normal((2, 3, 3, 4))), Tensor(g.standard_normal((2, 3, 1, 1))), Tensor(g.standard_normal(2))
    fn = lambda x, w, b: nn.conv2d(x, w, b)  # noqa: E731
    return finite_diff_check(_contract(fn, _probe(g, fn(x, w, b).shape)), [x, w, b], eps=eps)


def _batch_norm(g, eps):
    x, gamma, beta = Tensor(g.standard_normal((3, 2, 3, 3))), Tensor(g.standard_normal(2)), Tensor(g.standard_normal(2))
    fn = lambda x, ga, be: nn.batch_norm(x, ga, be, np.zeros(2), np.ones(2), training=True)  # noqa: E731
    return finite_diff_check(_contract(fn, _probe(g, x.shape)), [x, gamma, beta], eps=eps)


def _batch_norm_eval(g, eps):
    x, gamma, beta = Tensor(g.standard_normal((2, 2, 3, 3))), Tensor(g.standard_normal(2)), Tensor(g.standard_normal(2))
    rm, rv = g.standard_normal(2), g.random(2) + 0.5
    fn = lambda x, ga, be: nn.batch_norm(x, ga, be, rm, rv, training=False)  # noqa: E731
    return finite_diff_check(_contract(fn, _probe(g, x.shape)), [x, gamma, beta], eps=eps)


def _layer_norm(g, eps):
    x, gamma, beta = Tensor(g.standard_normal((2, 4, 2, 3))), Tensor(g.standard_normal(4)), Tensor(g.standard_normal(4))
    return finite_diff_check(_contract(nn.layer_norm, _probe(g, x.shape)), [x, gamma, beta], eps=eps)


def _max_pool(g, eps):
    # distinct values spaced far beyond eps keep every window's argmax stable
    x = Tensor(g.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.1)
    return finite_diff_check(_contract(nn.max_pool, _probe(g, (2, 2, 3, 3))), x, eps=eps)


def _linear(g, eps):
    x, w, b = Tensor(g.standard_normal((4, 5))), Tensor(g.standard_normal((3, 5))), Tensor(g.standard_normal(3))
    return finite_diff_check(_contract(nn.linear, _probe(g, (4, 3))), [x, w, b], eps=eps)


def _resnet_block(g, eps):
    block = nn.ResNetBlock(2, 3, 2, rng=g).train()
    x = Tensor(g.standard_normal((2, 2, 4, 4)))
    probe = _probe(g, (2, 3, 2, 2))
    return module_diff_check(block, lambda x: T.mul(block(x), probe).sum(), [x], eps=eps)


def _tokenizer(g, eps):
    tok = Tokenizer(4, 3, rng=g)
    X = Tensor(g.standard_normal((2, 5, 4)))
    probe = _probe(g, (2, 3, 4))
    return module_diff_check(tok, lambda X: T.mul(tok(X).tokens, probe).sum(), [X], eps=eps)


def _attention(mode):
    def case(g, eps):
        cfg = AttentionConfig(heads=2, embed_dim=2, source_mode=mode, tokens=2, dropout=0.0, features=3)
        mod = CrossViewTransformer(cfg, rng=g)
        t, s = Tensor(g.standard_normal((2, 3, 2, 2))), Tensor(g.standard_normal((2, 3, 2, 3)))
        probe = _probe(g, t.shape)
        return module_diff_check(mod, lambda t, s: T.mul(mod(t, s), probe).sum(), [t, s], eps=eps)

    return case


def _residual_combine(g, eps):
    cfg = AttentionConfig(heads=1, embed_dim=2, dropout=0.0, features=3)
    mod = CrossViewTransformer(cfg, rng=g)
    x, a = Tensor(g.standard_normal((2, 3, 2, 2))), Tensor(g.standard_normal((2, 3, 2, 2)))
    probe = _probe(g, x.shape)
    return module_diff_check(mod, lambda x, a: T.mul(residual_combine(x, a, mod), probe).sum(), [x, a], eps=eps)


def _dropout(g, eps):
    x = Tensor(g.standard_normal((4, 5)))
    seed = int(g.integers(2**31))
    fn = lambda x: T.dropout(x, 0.3, np.random.default_rng(seed), training=True)  # noqa: E731
    return finite_diff_check(_contract(fn, _probe(g, x.shape)), x, eps=eps)


def _bce(g, eps):
    y = (g.random(7) > 0.5).astype(np.float64)
    return finite_diff_check(lambda z: weighted_bce(z, y, (0.7, 1.4)), Tensor(g.standard_normal(7)), eps=eps)


def _masked_ce(g, eps):
    states = g.integers(0, 4, size=(6, 3))
    states[0] = 0
    return finite_diff_check(lambda z: masked_multitask_ce(z, states), Tensor(g.standard_normal((6, 3, 3))), eps=eps)


CASES: dict[str, Callable[[np.random.Generator, float], float]] = {
    "add": _binary(T.add, (3, 4)),
    "sub": _binary(T.sub, (3, 4)),
    "mul": _binary(T.mul, (3, 4)),
    "matmul": _binary(T.matmul, (2, 3, 4), (4, 5)),
    "scale": _unary(lambda x: T.scale(x, -1.7), (3, 4)),
    "relu": _unary(T.relu, (3, 4), lambda x: np.where(np.abs(x) < 1e-2, 0.5, x)),
    "exp": _unary(T.exp, (3, 4)),
    "log": _unary(T.log, (3, 4), lambda x: np.abs(x) + 0.5),
    "sigmoid": _unary(T.sigmoid, (3, 4)),
    "softmax": _unary(lambda x: T.softmax(x, axis=-1), (3, 5)),
    "sum": _unary(lambda x: T.tsum(x, axis=1, keepdims=True), (3, 4)),
    "mean": _unary(lambda x: T.mean(x, axis=0), (3, 4)),
    "reshape": _unary(lambda x: T.reshape(x, (6, 2)), (3, 4)),
    "transpose": _unary(lambda x: T.transpose(x, (2, 0, 1)), (2, 3, 4)),
    "concat": _binary(lambda a, b: T.concat([a, b], axis=1), (2, 3), (2, 2)),
    "getitem": _unary(lambda x: x[1:, ::2], (3, 4)),
    "dropout": _dropout,
    "conv2d": _conv,
    "conv2d_pointwise": _conv_pointwise,
    "batch_norm": _batch_norm,
    "batch_norm_eval": _batch_norm_eval,
    "layer_norm": _layer_norm,
    "max_pool": _max_pool,
    "global_avg_pool": _unary(nn.global_avg_pool, (2, 3, 3, 4)),
    "linear": _linear,
    "resnet_block": _resnet_block,
    "tokenizer": _tokenizer,
    "cross_attention_pixels": _attention("pixels"),
    "cross_attention_tokens": _attention("tokens"),
    "residual_combine": _residual_combine,
    "weighted_bce": _bce,
    "masked_multitask_ce": _masked_ce,
}


@dataclass
class CaseResult:
    name: str
    max_error: float
    seeds: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= THRESHOLD


def run(scope: str = "all", seeds: int = 10, eps: float = 1e-5) -> list[CaseResult]:
    """Run one named case (or all of them) over ``seeds`` seeds in double precision."""
    if scope != "all" and scope not in CASES:
        raise KeyError(scope)
    names = list(CASES) if scope == "all" else [scope]
    results = []
    with precision(np.float64):
        for name in names:
            start = time.perf_counter()
            worst = max(CASES[name](np.random.default_rng([seed, len(name)]), eps) for seed in range(seeds))
            results.append(CaseResult(name, worst, seeds, time.perf_counter() - start))
    return results


def format_table(results: list[CaseResult]) -> str:
    width = max(len("operation"), *(len(r.name) for r in results))
    lines = [f"{'operation':<{width}}  {'seeds':>5}  {'max_rel_error':>13}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.seeds:>5}  {r.max_error:>13.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)

"""Cross-view multi-head attention between two feature maps.

Queries are 1x1-conv embeddings of the target view's pixels, keys are 1x1-conv
embeddings of the source view's pixels (or of its visual tokens), and values
are the raw, unprojected source features. Each head yields f features per
target pixel; the h heads are concatenated head-major along channels and
reduced back to f channels by a 1x1 conv. The result ``a`` is merged into the
target as ``y = LayerNorm(x + Dropout(Linear(a)))`` where Linear is a 1x1 conv.

No positional encoding is used, so outputs do not depend on the order of the
source pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Conv2d, LayerNorm2d, Module, conv2d, linear
from .tensor import Tensor, dropout, matmul, reshape, scale, softmax, swapaxes, transpose
from .tokenizer import Tokenizer, TokenSet

SOURCE_MODES = ("pixels", "tokens")


@dataclass
class AttentionConfig:
    heads: int = 4
    embed_dim: int = 32
    source_mode: str = "pixels"
    tokens: int = 16
    dropout: float = 0.1
    features: int = 32

    def validate(self) -> None:
        if self.heads < 1 or self.embed_dim < 1 or self.features < 1:
            raise ConfigError(f"attention needs heads, embed_dim, features >= 1: {self}")
        if self.source_mode not in SOURCE_MODES:
            raise ConfigError(f"source_mode must be one of {SOURCE_MODES}, got {self.source_mode!r}")
        if self.source_mode == "tokens" and self.tokens < 1:
            raise ConfigError("token source mode needs at least one token")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


class QKV(NamedTuple):
    Q: Tensor  # (N, n, d)
    K: Tensor  # (N, m, d)
    V: Tensor  # (N, m, f)


class CrossViewTransformer(Module):
    """Weights for one direction (source view -> target view)."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator | None = None):
        super().__init__()
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        h, d, f = cfg.heads, cfg.embed_dim, cfg.features
        self.query = Conv2d(f, h * d, 1, rng=rng)
        self.key = Conv2d(f, h * d, 1, rng=rng)
        self.reduce = Conv2d(h * f, f, 1, rng=rng)
        self.linear = Conv2d(f, f, 1, rng=rng)
        self.norm = LayerNorm2d(f)
        self.tokenizer = Tokenizer(f, cfg.tokens, rng=rng) if cfg.source_mode == "tokens" else None

    def source(self, fm: Tensor) -> Tensor | TokenSet:
        """Attention source for a source feature map: the map itself or its tokens."""
        if self.tokenizer is None:
            return fm
        return self.tokenizer(flatten_pixels(fm))

    def forward(self, target: Tensor, source_fm: Tensor, training: bool = False, rng=None) -> Tensor:
        a = multi_head_cross_attention(target, self.source(source_fm), self.cfg, self)
        return residual_combine(target, a, self, training=training, rng=rng)


def flatten_pixels(fm: Tensor) -> Tensor:
    """(N, f, H, W) -> (N, H*W, f), pixels in row-major order."""
    n, f, h, w = fm.shape
    return swapaxes(reshape(fm, (n, f, h * w)), 1, 2)


def _embed_tokens(tokens: Tensor, conv: Conv2d) -> Tensor:
    oc, ic = conv.weight.shape[:2]
    return linear(tokens, reshape(conv.weight, (oc, ic)), conv.bias)


def _check_inputs(target: Tensor, source: Tensor | TokenSet, weights: CrossViewTransformer) -> None:
    f = weights.cfg.features
    src_f = source.tokens.shape[-1] if isinstance(source, TokenSet) else source.shape[1]
    if target.ndim != 4 or target.shape[1] != f or src_f != f:
        src_shape = source.tokens.shape if isinstance(source, TokenSet) else source.shape
        raise DimensionError(f"cross-view attention expects {f} channels; got target {target.shape}, source {src_shape}")


def build_qkv(target: Tensor, source: Tensor | TokenSet, weights: CrossViewTransformer, head: int) -> QKV:
    """Q, K, V matrices of one head. Q and K are embedded; V is the raw source content."""
    _check_inputs(target, source, weights)
    d = weights.cfg.embed_dim
    rows = slice(head * d, (head + 1) * d)
    q_all = conv2d(target, weights.query.weight, weights.query.bias)
    Q = flatten_pixels(q_all[:, rows])
    if isinstance(source, TokenSet):
        K = _embed_tokens(source.tokens, weights.key)[..., rows]
        V = source.tokens
    else:
        K = flatten_pixels(conv2d(source, weights.key.weight, weights.key.bias)[:, rows])
        V = flatten_pixels(source)
    return QKV(Q, K, V)


def scaled_dot_attention(qkv: QKV, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d)) V`` row-wise over source entries."""
    Q, K, V = qkv
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape} do not conform")
    logits = scale(matmul(Q, swapaxes(K, -1, -2)), 1.0 / np.sqrt(Q.shape[-1]))
    attn = softmax(logits, axis=-1)
    out = matmul(attn, V)
    return (out, attn) if return_weights else out


def multi_head_cross_attention(
    target: Tensor, source: Tensor | TokenSet, cfg: AttentionConfig, weights: CrossViewTransformer,
    return_weights: bool = False,
):
    """Attention-based feature maps ``a`` with the target's spatial shape.

    All heads are evaluated in one batched product; channel ``k*f + j`` of the
    concatenation holds feature j of head k.
    """
    _check_inputs(target, source, weights)
    n_b, f, ht, wt = target.shape
    h, d = cfg.heads, cfg.embed_dim
    n = ht * wt
    Q = transpose(reshape(conv2d(target, weights.query.weight, weights.query.bias), (n_b, h, d, n)), (0, 1, 3, 2))
    if isinstance(source, TokenSet):
        L = source.count
        k_emb = _embed_tokens(source.tokens, weights.key)  # (N, L, h*d)
        Kt = transpose(reshape(k_emb, (n_b, L, h, d)), (0, 2, 3, 1))
        V = source.tokens
    else:
        m = source.shape[2] * source.shape[3]
        Kt = reshape(conv2d(source, weights.key.weight, weights.key.bias), (n_b, h, d, m))
        V = flatten_pixels(source)
    logits = scale(matmul(Q, Kt), 1.0 / np.sqrt(d))  # (N, h, n, m)
    attn = softmax(logits, axis=-1)
    out = matmul(attn, reshape(V, (n_b, 1) + V.shape[1:]))  # (N, h, n, f)
    stacked = reshape(transpose(out, (0, 1, 3, 2)), (n_b, h * f, ht, wt))
    a = weights.reduce(stacked)
    return (a, attn) if return_weights else a


def residual_combine(
    x: Tensor, a: Tensor, weights: CrossViewTransformer, training: bool = False, rng=None
) -> Tensor:
    """``LayerNorm(x + Dropout(Linear(a)))``; Linear is a 1x1 conv to x's channels."""
    if x.ndim != 4 or a.ndim != 4 or x.shape[2:] != a.shape[2:] or x.shape[0] != a.shape[0]:
        raise DimensionError(f"residual_combine: x {x.shape} and a {a.shape} differ spatially")
    projected = weights.linear(a)
    if projected.shape != x.shape:
        raise DimensionError(f"residual_combine: Linear(a) is {projected.shape}, x is {x.shape}")
    return weights.norm(x + dropout(projected, weights.cfg.dropout, rng, training))


def bidirectional_apply(
    fm_a: Tensor, fm_b: Tensor, into_a: CrossViewTransformer, into_b: CrossViewTransformer,
    training: bool = False, rng=None,
) -> tuple[Tensor, Tensor]:
    """Transfer B -> A with ``into_a`` and A -> B with ``into_b``.

    Both directions read the pre-transformer maps.
    """
    if into_a is into_b:
        raise ConfigError("bidirectional_apply needs two independent modules")
    y_a = into_a(fm_a, fm_b, training=training, rng=rng)
    y_b = into_b(fm_b, fm_a, training=training, rng=rng)
    return y_a, y_b

"""Semantic visual tokens: three layers of spatial-softmax pooling.

Source pixels ``X`` (m x f) are grouped into ``L`` tokens. Layer 1 uses a
static projection ``W_A`` (f x L); layers 2 and 3 derive their projection from
the previous tokens, ``W_R = T_in @ W_TR``. Because ``X @ W_R`` does not conform
(m x f times L x f), the logits are computed as ``X @ W_R^T`` (m x L), the same
pattern as the static layer. Every token is a convex combination of pixels.

All functions take a leading batch axis: ``X`` is (N, m, f).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .nn import Module, parameter, xavier_uniform
from .tensor import Tensor, matmul, softmax, swapaxes

TOKEN_PRESETS = (16, 32, 48)


@dataclass
class TokenSet:
    """Tokens ``T`` (N, L, f), plus each layer's spatial weights (N, m, L) and tokens."""

    tokens: Tensor
    weights: list[Tensor] = field(default_factory=list)
    layer_tokens: list[Tensor] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]


def _spatial_pool(X: Tensor, logits: Tensor) -> tuple[Tensor, Tensor]:
    attn = softmax(logits, axis=-2)  # over the m pixels, per token column
    return matmul(swapaxes(attn, -1, -2), X), attn


def tokenize_static(X: Tensor, W_A: Tensor) -> TokenSet:
    """``T = softmax_m(X W_A)^T X``."""
    if X.shape[-1] != W_A.shape[0]:
        raise DimensionError(f"tokenize_static: X {X.shape} vs W_A {W_A.shape}")
    tokens, attn = _spatial_pool(X, matmul(X, W_A))
    return TokenSet(tokens, [attn], [tokens])


def tokenize_recurrent(X: Tensor, T_in: Tensor, W_TR: Tensor) -> TokenSet:
    """``W_R = T_in W_TR``; ``T = softmax_m(X W_R^T)^T X``."""
    f = X.shape[-1]
    if T_in.shape[-1] != f or W_TR.shape != (f, f):
        raise DimensionError(f"tokenize_recurrent: X {X.shape}, T_in {T_in.shape}, W_TR {W_TR.shape}")
    W_R = matmul(T_in, W_TR)
    tokens, attn = _spatial_pool(X, matmul(X, swapaxes(W_R, -1, -2)))
    return TokenSet(tokens, [attn], [tokens])


class Tokenizer(Module):
    """Weights ``W_A`` (f x L) and two distinct ``W_TR`` (f x f), Xavier-uniform."""

    def __init__(self, features: int, tokens: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.features, self.num_tokens = features, tokens
        self.W_A = parameter(xavier_uniform(rng, (features, tokens), features, tokens))
        self.W_TR_2 = parameter(xavier_uniform(rng, (features, features), features, features))
        self.W_TR_3 = parameter(xavier_uniform(rng, (features, features), features, features))

    def forward(self, X: Tensor) -> TokenSet:
        return tokenize(X, self)


def tokenize(X: Tensor, weights: Tokenizer) -> TokenSet:
    """Static layer followed by two recurrent layers; keeps every layer's weight map."""
    first = tokenize_static(X, weights.W_A)
    second = tokenize_recurrent(X, first.tokens, weights.W_TR_2)
    third = tokenize_recurrent(X, second.tokens, weights.W_TR_3)
    return TokenSet(
        third.tokens,
        first.weights + second.weights + third.weights,
        first.layer_tokens + second.layer_tokens + third.layer_tokens,
    )

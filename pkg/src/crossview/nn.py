"""Convolution, normalization and pooling layers plus a minimal module system.

All feature maps are (batch, channels, height, width). The functional ops
(``conv2d``, ``batch_norm``, ...) carry fused analytic backward passes; the
classes bundle their parameters and running statistics.
"""

from __future__ import annotations

from collections import OrderedDict
from contextlib import contextmanager
from typing import Iterator

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError
from .tensor import Tensor, default_dtype, make_node, relu

BN_EPS = 1e-5
LN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` is (out_ch, in_ch, kh, kw); ``bias`` is (out_ch,) or None.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if c != ic:
        raise DimensionError(f"conv2d: input has {c} channels but weight {weight.shape} expects {ic}")
    sy, sx = _pair(stride)
    py, px = _pair(padding)
    ho, wo = conv_output_size(h, kh, sy, py), conv_output_size(w, kw, sx, px)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {py},{px}")
    pointwise = kh == kw == 1 and sy == sx == 1 and py == px == 0
    cols = x.data.reshape(n, c, h * w) if pointwise else kernels.im2col(x.data, kh, kw, sy, sx, py, px)
    wmat = weight.data.reshape(oc, ic * kh * kw)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, oc, 1)
    out = out.reshape(n, oc, ho, wo)

    def backward(g):
        g2 = g.reshape(n, oc, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if pointwise:
                gx = gcols.reshape(x.shape)
            else:
                gx = kernels.col2im(gcols, c, h, w, kh, kw, sy, sx, py, px)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization over (batch, height, width).

    In training mode the running statistics are updated in place (unbiased
    variance), and a batch of one sample is rejected.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    n, c, h, w = x.shape
    shape = (1, c, 1, 1)
    if training:
        if n < 2:
            raise ContractError("batch_norm: training mode needs at least 2 samples in the batch")
        m = n * h * w
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(c) * (m / max(m - 1, 1))
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2, 3))
            gb = g.sum(axis=(0, 2, 3))
            gx = None
            if x.requires_grad:
                dxhat = g * gamma.data.reshape(shape)
                gx = inv * (
                    dxhat
                    - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                )
            return gx, gg, gb

    else:
        inv = 1.0 / np.sqrt(running_var.reshape(shape) + eps)
        xhat = (x.data - running_mean.reshape(shape)) * inv
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

        def backward(g):
            gx = g * (gamma.data.reshape(shape) * inv) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize each pixel's channel vector, then apply a per-channel affine map."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    shape = (1, x.shape[1], 1, 1)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            gx = inv * (
                dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_node(out, (x, gamma, beta), backward, "layer_norm")


def max_pool(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling; padded positions never win."""
    if x.ndim != 4:
        raise DimensionError(f"max_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise DimensionError(f"max_pool: {kernel}x{kernel} window does not fit {h}x{w}")
    out, arg = kernels.maxpool_forward(x.data, kernel, stride, padding)

    def backward(g):
        return (kernels.maxpool_backward(g, arg, h, w, kernel, stride, padding),)

    return make_node(out, (x,), backward, "max_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over all pixels: (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return make_node(out, (x,), backward, "global_avg_pool")


def pool(x: Tensor, kind: str) -> Tensor:
    if kind == "max":
        return max_pool(x)
    if kind == "global-average":
        return global_avg_pool(x)
    raise ValueError(f"unknown pool kind {kind!r}")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (..., in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = np.tensordot(g, x.data, axes=(list(range(g.ndim - 1)), list(range(x.ndim - 1))))
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "linear")


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of named parameters, buffers and submodules (registration order)."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update((name, b) for name, b in self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise DimensionError(f"state mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src

    @contextmanager
    def substitute(self, tensors: dict[str, Tensor]):
        """Temporarily replace parameters by name (e.g. ``"block1.b0.conv1.weight"``).

        Lets a caller differentiate the module's output with respect to
        tensors it owns, which is what gradient checking needs.
        """
        saved = []
        try:
            for name, t in tensors.items():
                owner: Module = self
                *path, leaf = name.split(".")
                for part in path:
                    owner = owner._modules[part]
                if leaf not in owner._params:
                    raise KeyError(f"no parameter named {name!r}")
                saved.append((owner, leaf, owner._params[leaf]))
                owner._params[leaf] = t
                object.__setattr__(owner, leaf, t)
            yield self
        finally:
            for owner, leaf, orig in reversed(saved):
                owner._params[leaf] = orig
                object.__setattr__(owner, leaf, orig)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, rng=None):
        super().__init__()
        kh, kw = _pair(kernel)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kh * kw
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.weight = parameter(kaiming_uniform(rng, (out_ch, in_ch, kh, kw), fan_in))
        self.bias = parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class LayerNorm2d(Module):
    def __init__(self, channels: int, eps: float = LN_EPS):
        super().__init__()
        self.eps = eps
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.weight = parameter(rng.uniform(-bound, bound, size=(out_features, in_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class ResNetBlock(Module):
    """Basic residual block: two 3x3 conv/BN stages and a shortcut.

    A 1x1 projection shortcut (with BN) is created exactly when the channel
    count or the stride changes.
    """

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, rng=None):
        super().__init__()
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, stride, 0, bias=False, rng=rng)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        return resnet_block(x, self, self.stride)


def resnet_block(x: Tensor, params: ResNetBlock, stride: int) -> Tensor:
    """``relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))``."""
    if x.shape[1] != params.in_ch:
        raise DimensionError(f"resnet_block: input has {x.shape[1]} channels, block expects {params.in_ch}")
    if stride != params.stride:
        raise DimensionError(f"resnet_block: stride {stride} does not match block stride {params.stride}")
    needs_proj = stride != 1 or params.in_ch != params.out_ch
    if needs_proj != (params.proj is not None):
        raise DimensionError("resnet_block: projection shortcut present iff channels or stride change")
    h = relu(params.bn1(params.conv1(x)))
    h = params.bn2(params.conv2(h))
    shortcut = params.proj_bn(params.proj(x)) if params.proj is not None else x
    return relu(h + shortcut)


# channel widths of the four residual stages at full scale
FULL_WIDTHS = (64, 128, 256, 512)


class ResNetStage(Module):
    """One row of the architecture table: ``depth`` basic blocks, the first one strided."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, depth: int = 2, rng=None):
        super().__init__()
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.depth = depth
        for i in range(depth):
            block = ResNetBlock(in_ch if i == 0 else out_ch, out_ch, stride if i == 0 else 1, rng=rng)
            self.add_module(f"b{i}", block)

    def forward(self, x: Tensor) -> Tensor:
        for i in range(self.depth):
            x = getattr(self, f"b{i}")(x)
        return x


class Backbone(Module):
    """ResNet-18-style branch: 7x7/2 stem, BN, ReLU, 3x3/2 max-pool, four residual stages.

    Stage strides are 1, 2, 2, 2; ResNet-18 uses two basic blocks per stage.
    """

    def __init__(self, in_channels: int = 1, width_multiplier: float = 0.125, blocks_per_stage: int = 2, rng=None):
        super().__init__()
        widths = self.stage_widths(width_multiplier)
        self.widths = widths
        self.conv1 = Conv2d(in_channels, widths[0], 7, 2, 3, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(widths[0])
        self.block1 = ResNetStage(widths[0], widths[0], 1, blocks_per_stage, rng=rng)
        self.block2 = ResNetStage(widths[0], widths[1], 2, blocks_per_stage, rng=rng)
        self.block3 = ResNetStage(widths[1], widths[2], 2, blocks_per_stage, rng=rng)
        self.block4 = ResNetStage(widths[2], widths[3], 2, blocks_per_stage, rng=rng)

    @staticmethod
    def stage_widths(width_multiplier: float) -> tuple[int, int, int, int]:
        return tuple(max(1, int(round(w * width_multiplier))) for w in FULL_WIDTHS)

    @property
    def blocks(self) -> list[ResNetStage]:
        return [self.block1, self.block2, self.block3, self.block4]

    def stem(self, x: Tensor) -> Tensor:
        return max_pool(relu(self.bn1(self.conv1(x))))

    def run(self, x: Tensor, start: int = 0, stop: int = 4) -> Tensor:
        """Apply the stem (when ``start == 0``) and residual stages ``start..stop-1``."""
        if start == 0:
            x = self.stem(x)
        for stage in self.blocks[start:stop]:
            x = stage(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        return self.run(x)

    def layer_shapes(self, input_shape: tuple[int, int, int, int]) -> list[tuple[str, tuple[int, ...]]]:
        """Output shape after each row of the architecture table, computed arithmetically."""
        n, _, h, w = input_shape
        rows = []
        h, w = conv_output_size(h, 7, 2, 3), conv_output_size(w, 7, 2, 3)
        rows += [("conv1", (n, self.widths[0], h, w)), ("bn1", (n, self.widths[0], h, w))]
        rows.append(("relu", (n, self.widths[0], h, w)))
        h, w = conv_output_size(h, 3, 2, 1), conv_output_size(w, 3, 2, 1)
        rows.append(("maxpool", (n, self.widths[0], h, w)))
        for i, stage in enumerate(self.blocks, start=1):
            h, w = conv_output_size(h, 3, stage.stride, 1), conv_output_size(w, 3, stage.stride, 1)
            rows.append((f"block{i}", (n, stage.out_ch, h, w)))
        rows.append(("global_avg_pool", (n, self.widths[3])))
        return rows

"""Stacked-residual reconstruction backbone.

The network maps a back-projected initialization cube (N, C, H, W) to a
reconstructed cube of the same shape: a head convolution embeds the C
input channels into a wider feature space, a chain of residual blocks
(CONV-ReLU-CONV plus local skip, no normalization layers) refines the
features, a parallel single-convolution branch of the input is added
back before the tail convolution projects to C channels.

Three variants trade spatial resolution for depth:

* v1: every block runs at full resolution.
* v2: one strided-conv / pixel-shuffle rescaling pair brackets the
  whole block chain, which runs at 1/r resolution.
* v3: v2 plus an inner rescaling pair around the middle blocks, which
  run at 1/r^2 resolution.

An optional channel-attention gate (squeeze to width/reduction, excite
back, sigmoid) rescales each block's residual before the local skip.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from fractions import Fraction

import numpy as np

from .autograd import (Tensor, conv2d, global_avg_pool, init_conv_weight,
                       pixel_shuffle, relu, sigmoid)
from .exceptions import ContractError, DimensionError

VARIANTS = ("v1", "v2", "v3")


@dataclass(frozen=True)
class SrnConfig:
    """Architecture hyperparameters.

    inner_rbs only matters for v3: that many consecutive middle blocks
    run inside the inner rescaling pair, the rest split evenly outside.
    """

    in_channels: int
    width: int = 64
    num_rbs: int = 16
    kernel_size: int = 3
    use_cae: bool = False
    cae_reduction: int = 2
    variant: str = "v1"
    rescale_scale: int = 2
    inner_rbs: int = 8

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ContractError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.width < self.in_channels:
            raise ContractError(
                f"feature width {self.width} must be >= in_channels {self.in_channels}")
        if self.num_rbs < 1:
            raise ContractError(f"num_rbs must be >= 1, got {self.num_rbs}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ContractError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.use_cae:
            if self.cae_reduction < 1 or self.width % self.cae_reduction != 0:
                raise ContractError(
                    f"cae_reduction {self.cae_reduction} must divide width {self.width}")
        if self.variant != "v1" and self.rescale_scale < 2:
            raise ContractError(
                f"rescale_scale must be >= 2 for {self.variant}, got {self.rescale_scale}")
        if self.variant == "v3" and not 0 < self.inner_rbs <= self.num_rbs:
            raise ContractError(
                f"inner_rbs must be in (0, {self.num_rbs}], got {self.inner_rbs}")

    @staticmethod
    def tiny(in_channels: int, use_cae: bool = False, variant: str = "v1") -> "SrnConfig":
        """Two blocks, width 8: the smoke-test configuration."""
        return SrnConfig(in_channels=in_channels, width=8, num_rbs=2,
                         use_cae=use_cae, variant=variant, inner_rbs=2)


def block_split(config: SrnConfig) -> tuple[int, int, int]:
    """Blocks (before, inside, after) the inner pair for v3; all-outside otherwise."""
    if config.variant != "v3":
        return config.num_rbs, 0, 0
    inner = config.inner_rbs
    before = (config.num_rbs - inner) // 2
    after = config.num_rbs - inner - before
    return before, inner, after


class Conv2dLayer:
    """A convolution with its own weight/bias tensors."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        w, b = init_conv_weight(rng, c_out, c_in, k, dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      padding=self.padding)


class ChannelGate:
    """Squeeze-and-excite attention over feature channels."""

    def __init__(self, width: int, reduction: int, rng, dtype):
        hidden = width // reduction
        self.squeeze = Conv2dLayer(width, hidden, 1, rng=rng, dtype=dtype)
        self.excite = Conv2dLayer(hidden, width, 1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        n, c = x.shape[0], x.shape[1]
        a = global_avg_pool(x).reshape(n, c, 1, 1)
        a = sigmoid(self.excite(relu(self.squeeze(a))))
        return x * a


class ResidualBlock:
    def __init__(self, width: int, k: int, use_cae: bool, cae_reduction: int,
                 rng, dtype):
        self.conv1 = Conv2dLayer(width, width, k, rng=rng, dtype=dtype)
        self.conv2 = Conv2dLayer(width, width, k, rng=rng, dtype=dtype)
        self.gate = ChannelGate(width, cae_reduction, rng, dtype) if use_cae else None

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(relu(self.conv1(x)))
        if self.gate is not None:
            y = self.gate(y)
        return x + y


class RescalePair:
    """Strided-conv downsampling matched with conv + pixel-shuffle upsampling."""

    def __init__(self, width: int, k: int, scale: int, rng, dtype):
        self.down = Conv2dLayer(width, width, k, stride=scale, rng=rng, dtype=dtype)
        self.up = Conv2dLayer(width, width * scale * scale, k, rng=rng, dtype=dtype)
        self.scale = scale

    def shrink(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % self.scale:
            raise DimensionError(
                f"height {h} not divisible by rescale factor {self.scale}")
        if w % self.scale:
            raise DimensionError(
                f"width {w} not divisible by rescale factor {self.scale}")
        return self.down(x)

    def grow(self, x: Tensor) -> Tensor:
        return pixel_shuffle(self.up(x), self.scale)


class SrnModel:
    """The full backbone; callable on (N, C, H, W) tensors."""

    def __init__(self, config: SrnConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        config.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        c, width, k = config.in_channels, config.width, config.kernel_size
        self.config = config
        self.dtype = np.dtype(dtype)
        self.head = Conv2dLayer(c, width, k, rng=rng, dtype=dtype)
        self.skip = Conv2dLayer(c, width, k, rng=rng, dtype=dtype)
        self.outer = (RescalePair(width, k, config.rescale_scale, rng, dtype)
                      if config.variant in ("v2", "v3") else None)
        self.inner = (RescalePair(width, k, config.rescale_scale, rng, dtype)
                      if config.variant == "v3" else None)
        self.blocks = [ResidualBlock(width, k, config.use_cae, config.cae_reduction,
                                     rng, dtype)
                       for _ in range(config.num_rbs)]
        self.tail = Conv2dLayer(width, c, k, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4:
            raise DimensionError(f"expected NCHW input, got {x.data.ndim}-D")
        if x.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"input has {x.shape[1]} channels, model expects {self.config.in_channels}")
        feat = self.head(x)
        if self.outer is not None:
            feat = self.outer.shrink(feat)
        before, inside, after = block_split(self.config)
        i = 0
        for _ in range(before):
            feat = self.blocks[i](feat)
            i += 1
        if self.inner is not None:
            feat = self.inner.shrink(feat)
            for _ in range(inside):
                feat = self.blocks[i](feat)
                i += 1
            feat = self.inner.grow(feat)
        for _ in range(after):
            feat = self.blocks[i](feat)
            i += 1
        if self.outer is not None:
            feat = self.outer.grow(feat)
        return self.tail(feat + self.skip(x))

    # -- parameter bookkeeping ---------------------------------------------

    def named_layers(self) -> list[tuple[str, Conv2dLayer]]:
        out: list[tuple[str, Conv2dLayer]] = [("head", self.head), ("skip", self.skip)]
        if self.outer is not None:
            out += [("outer.down", self.outer.down), ("outer.up", self.outer.up)]
        if self.inner is not None:
            out += [("inner.down", self.inner.down), ("inner.up", self.inner.up)]
        for i, blk in enumerate(self.blocks):
            prefix = f"block{i:02d}"
            out += [(f"{prefix}.conv1", blk.conv1), (f"{prefix}.conv2", blk.conv2)]
            if blk.gate is not None:
                out += [(f"{prefix}.gate.squeeze", blk.gate.squeeze),
                        (f"{prefix}.gate.excite", blk.gate.excite)]
        out.append(("tail", self.tail))
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        pairs: list[tuple[str, Tensor]] = []
        for name, layer in self.named_layers():
            pairs.append((f"{name}.weight", layer.weight))
            pairs.append((f"{name}.bias", layer.bias))
        return pairs

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def config_dict(self) -> dict:
        d = asdict(self.config)
        d["dtype"] = self.dtype.name
        return d


# -- architecture accounting ----------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """One compute element of the forward pass, in execution order.

    kind "conv" carries mac-relevant fields; elementwise kinds ("relu",
    "add", "mul", "sigmoid", "pool", "shuffle") carry output element
    counts via (c_out, h_out, w_out). on_path marks the deepest serial
    conv path used for the receptive-field recurrence; stride may be a
    Fraction for pixel-shuffle entries.
    """

    name: str
    kind: str
    c_in: int
    c_out: int
    k: int
    stride: Fraction
    h_out: int
    w_out: int
    on_path: bool

    @property
    def params(self) -> int:
        if self.kind != "conv":
            return 0
        return self.c_out * self.c_in * self.k * self.k + self.c_out

    @property
    def flops(self) -> int:
        if self.kind == "conv":
            return self.c_out * self.c_in * self.k * self.k * self.h_out * self.w_out
        return self.c_out * self.h_out * self.w_out


def layer_plan(config: SrnConfig, height: int, width: int) -> list[LayerSpec]:
    """Enumerate every compute element of one forward pass (batch 1).

    Spatial sizes follow the variant's rescaling schedule; raises if the
    input is not divisible by the scale factor where a pair shrinks it.
    """
    config.validate()
    c, nf, k = config.in_channels, config.width, config.kernel_size
    r = config.rescale_scale
    rows: list[LayerSpec] = []

    def conv(name, cin, cout, kk, stride, h, w, on_path):
        rows.append(LayerSpec(name, "conv", cin, cout, kk, Fraction(stride),
                              h, w, on_path))

    def elem(name, kind, cout, h, w, stride=Fraction(1), on_path=False, kk=1):
        rows.append(LayerSpec(name, kind, cout, cout, kk, Fraction(stride),
                              h, w, on_path))

    def shrink(h, w, where):
        if h % r:
            raise DimensionError(f"height {h} not divisible by {r} at {where}")
        if w % r:
            raise DimensionError(f"width {w} not divisible by {r} at {where}")
        return h // r, w // r

    def block(idx, h, w):
        prefix = f"block{idx:02d}"
        conv(f"{prefix}.conv1", nf, nf, k, 1, h, w, True)
        elem(f"{prefix}.relu", "relu", nf, h, w)
        conv(f"{prefix}.conv2", nf, nf, k, 1, h, w, True)
        if config.use_cae:
            hidden = nf // config.cae_reduction
            elem(f"{prefix}.gate.pool", "pool", nf, 1, 1)
            conv(f"{prefix}.gate.squeeze", nf, hidden, 1, 1, 1, 1, False)
            elem(f"{prefix}.gate.relu", "relu", hidden, 1, 1)
            conv(f"{prefix}.gate.excite", hidden, nf, 1, 1, 1, 1, False)
            elem(f"{prefix}.gate.sigmoid", "sigmoid", nf, 1, 1)
            elem(f"{prefix}.gate.mul", "mul", nf, h, w)
        elem(f"{prefix}.add", "add", nf, h, w)

    h, w = height, width
    conv("head", c, nf, k, 1, h, w, True)
    if config.variant in ("v2", "v3"):
        h, w = shrink(h, w, "outer pair")
        conv("outer.down", nf, nf, k, r, h, w, True)
    before, inside, after = block_split(config)
    idx = 0
    for _ in range(before):
        block(idx, h, w)
        idx += 1
    if config.variant == "v3":
        h, w = shrink(h, w, "inner pair")
        conv("inner.down", nf, nf, k, r, h, w, True)
        for _ in range(inside):
            block(idx, h, w)
            idx += 1
        conv("inner.up", nf, nf * r * r, k, 1, h, w, True)
        h, w = h * r, w * r
        elem("inner.shuffle", "shuffle", nf, h, w, stride=Fraction(1, r),
             on_path=True)
        for _ in range(after):
            block(idx, h, w)
            idx += 1
    if config.variant in ("v2", "v3"):
        conv("outer.up", nf, nf * r * r, k, 1, h, w, True)
        h, w = h * r, w * r
        elem("outer.shuffle", "shuffle", nf, h, w, stride=Fraction(1, r),
             on_path=True)
    conv("skip", c, nf, k, 1, height, width, False)
    elem("global.add", "add", nf, height, width)
    conv("tail", nf, c, k, 1, height, width, True)
    return rows

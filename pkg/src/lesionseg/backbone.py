"""Small convolutional encoder/decoder and the key/value projection heads.

The encoder is a stack of downsampling stages (strided 3x3 conv followed by
one residual 3x3 block), trainable from scratch at desk scale.  The last
stage feature is projected by two 1x1 heads into a low-channel matching key
and a wider content value.  The decoder walks back up through the skip
features and emits a single-channel logit map at input resolution.

A mask channel is always part of the encoder input: frames encoded for the
memory bank carry their (predicted or ground-truth) mask there, plain
frames carry zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, conv2d, relu, sigmoid, upsample2x
from .errors import ShapeError, ValidationError


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    stage_channels: tuple[int, ...] = (16, 32, 64)
    total_stride: int = 8
    feature_channels: int = 64

    def __post_init__(self):
        if self.total_stride != 2 ** len(self.stage_channels):
            raise ValidationError(
                f"total_stride {self.total_stride} must equal 2^(stages) = "
                f"{2 ** len(self.stage_channels)}")
        if self.feature_channels != self.stage_channels[-1]:
            raise ValidationError("feature_channels must equal the last stage width")
        if self.feature_channels % 8 != 0:
            raise ValidationError("feature_channels must be divisible by 8")

    @property
    def key_channels(self) -> int:
        return self.feature_channels // 8

    @property
    def value_channels(self) -> int:
        return self.feature_channels // 2


@dataclass
class FrameEmbedding:
    """Per-frame encoder outputs."""

    feature: Tensor            # (C, h, w) last-stage feature map
    key: Tensor                # (C/8, h, w)
    value: Tensor              # (C/2, h, w)
    skips: list[Tensor] = field(default_factory=list)   # per-stage maps, shallow to deep
    tap: int = 4               # which stage feeds the coarse-grained branch


class Initializer:
    """Seeded uniform +-sqrt(6/(fan_in+fan_out)) parameter factory."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def conv(self, cout: int, cin: int, kh: int, kw: int) -> Tensor:
        fan_in, fan_out = cin * kh * kw, cout * kh * kw
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(self.rng.uniform(-limit, limit, (cout, cin, kh, kw)), requires_grad=True)

    def dense(self, nout: int, nin: int) -> Tensor:
        limit = np.sqrt(6.0 / (nin + nout))
        return Tensor(self.rng.uniform(-limit, limit, (nout, nin)), requires_grad=True)

    @staticmethod
    def bias(n: int) -> Tensor:
        return Tensor(np.zeros(n), requires_grad=True)


class Conv:
    """A conv2d layer bundling weight, bias and its fixed geometry."""

    def __init__(self, init: Initializer, cin: int, cout: int, k: int,
                 stride: int = 1, padding: int | None = None):
        self.weight = init.conv(cout, cin, k, k)
        self.bias = Initializer.bias(cout)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def _flatten_params(named: dict[str, object]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for prefix, item in named.items():
        if isinstance(item, Tensor):
            out[prefix] = item
        else:
            for sub, tensor in item.params().items():
                out[f"{prefix}.{sub}"] = tensor
    return out


class _Stage:
    """One downsampling stage: strided conv then a residual 3x3 block."""

    def __init__(self, init: Initializer, cin: int, cout: int):
        self.down = Conv(init, cin, cout, 3, stride=2)
        self.res1 = Conv(init, cout, cout, 3)
        self.res2 = Conv(init, cout, cout, 3)

    def __call__(self, x: Tensor) -> Tensor:
        h = relu(self.down(x))
        return relu(h + self.res2(relu(self.res1(h))))

    def params(self) -> dict[str, Tensor]:
        return _flatten_params({"down": self.down, "res1": self.res1, "res2": self.res2})


class Encoder:
    """Configurable strided-conv encoder with key/value projection heads."""

    def __init__(self, config: EncoderConfig, init: Initializer):
        self.config = config
        channels = [config.in_channels + 1] + list(config.stage_channels)  # +1 mask channel
        self.stages = [_Stage(init, channels[i], channels[i + 1])
                       for i in range(len(config.stage_channels))]
        c = config.feature_channels
        self.key_head = Conv(init, c, config.key_channels, 1)
        self.value_head = Conv(init, c, config.value_channels, 1)

    def encode(self, frame: Tensor, mask: Tensor | None = None, tap: int = 4) -> FrameEmbedding:
        """Embed one (1, H, W) frame, optionally carrying a mask channel."""
        if frame.ndim != 3 or frame.shape[0] != self.config.in_channels:
            raise ShapeError(f"expected ({self.config.in_channels}, H, W) frame, got {frame.shape}")
        _, h0, w0 = frame.shape
        stride = self.config.total_stride
        if h0 % stride or w0 % stride:
            raise ShapeError(
                f"frame size {h0}x{w0} not divisible by total stride {stride}; "
                f"pad to a multiple of {stride} first")
        if mask is None:
            mask = Tensor(np.zeros((1, h0, w0)))
        else:
            if mask.shape != (1, h0, w0):
                raise ShapeError(f"mask shape {mask.shape} != (1, {h0}, {w0})")
            if mask.data.min() < 0.0 or mask.data.max() > 1.0:
                raise ValidationError("mask channel values must lie in [0, 1]")
        x = concat([frame, mask], axis=0)
        skips = []
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
        feature = skips[-1]
        return FrameEmbedding(
            feature=feature,
            key=self.key_head(feature),
            value=self.value_head(feature),
            skips=skips,
            tap=tap,
        )

    def params(self) -> dict[str, Tensor]:
        named: dict[str, object] = {f"stage{i}": s for i, s in enumerate(self.stages)}
        named["key_head"] = self.key_head
        named["value_head"] = self.value_head
        return _flatten_params(named)


class Decoder:
    """Upsample-concat-conv blocks from the fused feature back to image size."""

    def __init__(self, config: EncoderConfig, init: Initializer,
                 in_channels: int | None = None):
        self.config = config
        widths = list(config.stage_channels)
        cin = config.value_channels if in_channels is None else in_channels
        self.blocks: list[Conv] = []
        for skip_width in widths[-2::-1]:   # block output width tracks its skip
            self.blocks.append(Conv(init, cin + skip_width, skip_width, 3))
            cin = skip_width
        self.head = Conv(init, cin, 1, 1)

    def decode(self, fused: Tensor, skips: list[Tensor]) -> Tensor:
        """(C/2, h, w) fused feature + encoder skips -> (1, H, W) logits."""
        if fused.shape[1:] != skips[-1].shape[1:]:
            raise ShapeError(
                f"fused feature spatial dims {fused.shape[1:]} != last skip {skips[-1].shape[1:]}")
        x = fused
        for block, skip in zip(self.blocks, skips[-2::-1]):
            x = upsample2x(x, "nearest")
            if x.shape[1:] != skip.shape[1:]:
                raise ShapeError(
                    f"decoder feature {x.shape[1:]} does not match skip {skip.shape[1:]}")
            x = relu(block(concat([x, skip], axis=0)))
        return upsample2x(self.head(x), "bilinear")

    def params(self) -> dict[str, Tensor]:
        named: dict[str, object] = {f"block{i}": b for i, b in enumerate(self.blocks)}
        named["head"] = self.head
        return _flatten_params(named)


def predict_mask(logits: Tensor) -> Tensor:
    """Sigmoid of the logit map: per-pixel foreground probability."""
    return sigmoid(logits)

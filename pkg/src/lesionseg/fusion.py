"""Multi-scale feature fusion: per-branch channel weights from pooled
statistics, then a weighted sum of the temporal, spatial, and coarse
encoder branches.

Channel weights are squeeze-excitation style: global pooling reduces each
branch to per-channel statistics, two dense layers map them to a weight
vector in (0, 1), and the weights broadcast back over the spatial dims.
The coarse branch is lifted to the common channel width by a 1x1
convolution before weighting, since the weighted sum needs equal widths.
"""

from __future__ import annotations

from .autodiff import Tensor, concat, linear, mul, pool2d, relu, reshape, sigmoid
from .backbone import Conv, Initializer, _flatten_params
from .errors import ShapeError

POOLING_MODES = ("max", "avg", "both")


class FcHead:
    """Two dense layers mapping pooled statistics to weights in (0, 1)."""

    def __init__(self, init: Initializer, channels: int, pooling: str = "both",
                 reduction: int = 4):
        if pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {pooling!r}")
        self.channels = channels
        self.pooling = pooling
        nin = 2 * channels if pooling == "both" else channels
        hidden = max(1, channels // reduction)
        self.w1 = init.dense(hidden, nin)
        self.b1 = Initializer.bias(hidden)
        self.w2 = init.dense(channels, hidden)
        self.b2 = Initializer.bias(channels)

    def params(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def channel_weights(x: Tensor, head: FcHead) -> Tensor:
    """Pooled statistics of a (C', h, w) map -> per-channel weights (C',)."""
    if x.ndim != 3 or x.shape[0] != head.channels:
        raise ShapeError(f"feature shape {x.shape} does not match head width {head.channels}")
    if head.pooling == "both":
        stats = concat([pool2d(x, "avg"), pool2d(x, "max")], axis=0)
    else:
        stats = pool2d(x, head.pooling)
    hidden = relu(linear(stats, head.w1, head.b1))
    return sigmoid(linear(hidden, head.w2, head.b2))


def weighted_sum(features: list[Tensor], weights: list[Tensor]) -> Tensor:
    """Sum of per-channel-weighted maps; weights broadcast spatially."""
    if not features or len(features) != len(weights):
        raise ValueError("need one weight vector per feature map")
    total = None
    for feat, wvec in zip(features, weights):
        term = mul(reshape(wvec, (wvec.shape[0], 1, 1)), feat)
        total = term if total is None else total + term
    return total


class WeightedFusion:
    """The fusion block: three branch heads plus the coarse-lift projection."""

    def __init__(self, init: Initializer, value_channels: int, coarse_channels: int,
                 pooling: str = "both", reduction: int = 4):
        self.lift = Conv(init, coarse_channels, value_channels, 1)
        self.head_temporal = FcHead(init, value_channels, pooling, reduction)
        self.head_spatial = FcHead(init, value_channels, pooling, reduction)
        self.head_coarse = FcHead(init, value_channels, pooling, reduction)

    def fuse(self, temporal: Tensor, spatial: Tensor | None, coarse: Tensor) -> Tensor:
        """Weighted sum of the available branches at (C/2, h, w)."""
        for name, feat in (("spatial", spatial), ("coarse", coarse)):
            if feat is not None and feat.shape[1:] != temporal.shape[1:]:
                raise ShapeError(
                    f"{name} branch spatial dims {feat.shape[1:]} != temporal {temporal.shape[1:]}")
        lifted = self.lift(coarse)
        features = [temporal, lifted]
        weights = [channel_weights(temporal, self.head_temporal),
                   channel_weights(lifted, self.head_coarse)]
        if spatial is not None:
            features.insert(1, spatial)
            weights.insert(1, channel_weights(spatial, self.head_spatial))
        return weighted_sum(features, weights)

    def params(self) -> dict[str, Tensor]:
        return _flatten_params({
            "lift": self.lift,
            "head_temporal": self.head_temporal,
            "head_spatial": self.head_spatial,
            "head_coarse": self.head_coarse,
        })


class ConcatReduce:
    """Fallback fusion with the weighting disabled: concat then 1x1 conv."""

    def __init__(self, init: Initializer, channels: int):
        self.reduce = Conv(init, 2 * channels, channels, 1)

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        return self.reduce(concat([a, b], axis=0))

    def params(self) -> dict[str, Tensor]:
        return _flatten_params({"reduce": self.reduce})

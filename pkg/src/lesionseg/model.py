"""Model assembly: encoder, decoder, coarse tap, and the fusion stage,
wired according to a ModelConfig.

The config controls which branches exist. The temporal branch is always
on. The spatial branch and the weighted fusion are toggleable; with the
weighting disabled the branches are merged by concat + 1x1 conv, and
with the spatial branch also disabled the temporal read feeds the
decoder directly. Parameter creation order is fixed by construction
order, so (config, seed) fully determines the initial weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .backbone import Conv, Decoder, Encoder, EncoderConfig, Initializer, _flatten_params
from .errors import ValidationError
from .fusion import POOLING_MODES, ConcatReduce, WeightedFusion
from .temporal import SIMILARITY_MODES

TAP_CHOICES = (2, 3, 4)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and branch-toggle settings."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_sfm: bool = True            # spatial branch (prior-gated read)
    use_msff: bool = True           # weighted multi-branch fusion
    pooling: str = "both"
    encoder_tap: int = 4            # 4 = last stage, 3 = second last, 2 = third last
    prior_mask_mapping: bool = True
    similarity: str = "standard"
    key_scaling: bool = True
    key_from_gated: bool = False
    use_current_value: bool = False
    hard_prior: bool = False
    memory_capacity: int | None = None
    fc_reduction: int = 4

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ValidationError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.encoder_tap not in TAP_CHOICES:
            raise ValidationError(f"encoder_tap must be one of {TAP_CHOICES}, got {self.encoder_tap}")
        if self.similarity not in SIMILARITY_MODES:
            raise ValidationError(
                f"similarity must be one of {SIMILARITY_MODES}, got {self.similarity!r}")
        if self.memory_capacity is not None and self.memory_capacity < 1:
            raise ValidationError("memory_capacity must be None or >= 1")
        if self.tap_stage_index < 0:
            raise ValidationError(
                f"encoder_tap {self.encoder_tap} needs at least {5 - self.encoder_tap} "
                f"encoder stages, config has {len(self.encoder.stage_channels)}")

    @property
    def tap_stage_index(self) -> int:
        # tap 4 names the last stage, 3 the second last, 2 the third last
        return len(self.encoder.stage_channels) + self.encoder_tap - 5


class SegmentationModel:
    """All trainable pieces of the network plus the branch-merge logic."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config if config is not None else ModelConfig()
        cfg = self.config
        enc = cfg.encoder
        init = Initializer(seed)
        self.encoder = Encoder(enc, init)
        decode_in = enc.value_channels * (2 if cfg.use_current_value else 1)
        self.decoder = Decoder(enc, init, in_channels=decode_in)
        self.tap_proj: Conv | None = None
        self.fusion: WeightedFusion | None = None
        self.reduce: ConcatReduce | None = None
        if cfg.use_msff:
            idx = cfg.tap_stage_index
            tap_stride = enc.total_stride // (2 ** (idx + 1))
            self.tap_proj = Conv(init, enc.stage_channels[idx], enc.key_channels, 1,
                                 stride=tap_stride, padding=0)
            self.fusion = WeightedFusion(init, enc.value_channels, enc.key_channels,
                                         cfg.pooling, cfg.fc_reduction)
        elif cfg.use_sfm:
            self.reduce = ConcatReduce(init, enc.value_channels)

    # -- branch plumbing -------------------------------------------------

    def coarse_tap(self, skips: list[Tensor]) -> Tensor:
        """Project the configured encoder stage to (C/8, h, w)."""
        assert self.tap_proj is not None, "coarse tap exists only with fusion enabled"
        return self.tap_proj(skips[self.config.tap_stage_index])

    def merge_branches(self, temporal: Tensor, spatial: Tensor | None,
                       skips: list[Tensor]) -> Tensor:
        """Combine branch reads into the (C/2, h, w) decoder input feature."""
        if self.fusion is not None:
            return self.fusion.fuse(temporal, spatial, self.coarse_tap(skips))
        if self.reduce is not None:
            assert spatial is not None, "concat merge needs the spatial branch"
            return self.reduce(temporal, spatial)
        return temporal

    def decode(self, fused: Tensor, skips: list[Tensor],
               current_value: Tensor | None = None) -> Tensor:
        if self.config.use_current_value:
            assert current_value is not None
            fused = concat([fused, current_value], axis=0)
        return self.decoder.decode(fused, skips)

    # -- parameter registry ----------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        """Stable name -> tensor map over every trainable parameter."""
        named: dict[str, object] = {"encoder": self.encoder, "decoder": self.decoder}
        if self.tap_proj is not None:
            named["tap_proj"] = self.tap_proj
        if self.fusion is not None:
            named["fusion"] = self.fusion
        if self.reduce is not None:
            named["reduce"] = self.reduce
        return _flatten_params(named)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def describe(self) -> str:
        """Human-readable per-parameter shape table with the total count."""
        lines = []
        total = 0
        for name, p in self.parameters().items():
            lines.append(f"{name}\t{'x'.join(map(str, p.shape))}\t{p.size}")
            total += p.size
        lines.append(f"total\t\t{total}")
        return "\n".join(lines)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def load_parameter_data(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match."""
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ValidationError(
                f"parameter name mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValidationError(
                    f"parameter {name}: shape {arrays[name].shape} != expected {p.shape}")
            p.data = np.asarray(arrays[name], dtype=np.float64)

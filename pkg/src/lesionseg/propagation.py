"""Mask propagation: seed the memory with the annotated first frame, then
predict every later frame from the memory read, the prior-gated spatial
read, and the coarse encoder tap.

The same step function serves training and inference. State updates use
the soft predicted mask by default so gradients can flow from a later
frame's loss into an earlier prediction; `update_mask` overrides that
(teacher forcing), and the hard-prior option binarizes before reuse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, sigmoid
from .data import Padding, unpad
from .errors import ValidationError
from .model import SegmentationModel
from .spatial import PriorState, apply_prior, spatial_read
from .temporal import MemoryBank, memory_read


@dataclass
class PropagationState:
    """Memory bank plus previous-frame prior; advances one frame per step."""

    memory: MemoryBank
    prior: PriorState
    frame_index: int    # frames consumed so far


def _as_state_mask(pred: Tensor, hard: bool) -> Tensor:
    """Mask carried into memory/prior: soft by default, thresholded if hard."""
    if hard:
        return Tensor((pred.data >= 0.5).astype(np.float64))
    return pred


def init(model: SegmentationModel, frame: Tensor, gt_mask: Tensor) -> PropagationState:
    """Seed propagation with the first frame and its ground-truth mask."""
    if gt_mask is None:
        raise ValidationError("propagation needs the first frame's ground-truth mask")
    if gt_mask.shape != frame.shape:
        raise ValidationError(f"mask shape {gt_mask.shape} != frame shape {frame.shape}")
    values = np.unique(gt_mask.data)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValidationError("first-frame mask must be binary {0, 1}")
    cfg = model.config
    seeded = model.encoder.encode(frame, mask=gt_mask, tap=cfg.encoder_tap)
    memory = MemoryBank(capacity=cfg.memory_capacity)
    memory.append(seeded.key, seeded.value)
    raw = model.encoder.encode(frame, tap=cfg.encoder_tap)
    prior = PriorState(prev_frame=frame, prev_mask=gt_mask, prev_key=raw.key)
    return PropagationState(memory=memory, prior=prior, frame_index=1)


def step(model: SegmentationModel, state: PropagationState, frame: Tensor,
         update_mask: Tensor | None = None) -> tuple[PropagationState, Tensor]:
    """Predict one frame and fold it into the propagation state.

    Returns the advanced state and the (1, H, W) probability map. When
    `update_mask` is given (teacher forcing) it replaces the prediction
    in the memory append and the next prior.
    """
    cfg = model.config
    current = model.encoder.encode(frame, tap=cfg.encoder_tap)
    temporal = memory_read(state.memory, current.key, key_scaling=cfg.key_scaling,
                           similarity=cfg.similarity)
    spatial = None
    if cfg.use_sfm:
        if cfg.prior_mask_mapping:
            gate_input = apply_prior(state.prior.prev_mask, frame)
        else:
            gate_input = frame
        gated = model.encoder.encode(gate_input, tap=cfg.encoder_tap)
        prev_key = gated.key if cfg.key_from_gated else state.prior.prev_key
        spatial = spatial_read(current.key, prev_key, gated.value,
                               key_scaling=cfg.key_scaling, similarity=cfg.similarity)
    fused = model.merge_branches(temporal, spatial, current.skips)
    logits = model.decode(fused, current.skips, current_value=current.value)
    pred = sigmoid(logits)

    state_mask = _as_state_mask(pred if update_mask is None else update_mask,
                                cfg.hard_prior)
    remembered = model.encoder.encode(frame, mask=state_mask, tap=cfg.encoder_tap)
    state.memory.append(remembered.key, remembered.value)
    prior = PriorState(prev_frame=frame, prev_mask=state_mask, prev_key=current.key)
    return PropagationState(memory=state.memory, prior=prior,
                            frame_index=state.frame_index + 1), pred


def propagate(model: SegmentationModel, frames: list[Tensor], first_gt: Tensor,
              padding: Padding | None = None) -> list[np.ndarray]:
    """Predict frames 2..N given the first frame's mask.

    Returns N-1 probability maps as numpy arrays, cropped back to the
    original resolution when padding is given.
    """
    if len(frames) < 2:
        raise ValidationError(f"propagation needs at least 2 frames, got {len(frames)}")
    state = init(model, frames[0], first_gt)
    preds: list[np.ndarray] = []
    for frame in frames[1:]:
        state, pred = step(model, state, frame)
        out = pred.data
        if padding is not None:
            out = unpad(out, padding)
        preds.append(out)
    return preds

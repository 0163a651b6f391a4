"""Training loop: one 3-frame clip per step, cross-entropy on the two
predicted frames, plain SGD with optional momentum.

The clip stream, parameter init, and update order are all driven by the
run seed, so a (config, seed) pair reproduces the checkpoint bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .config import RunConfig
from .data import Clip, VideoSequence, sample_clips
from .errors import TrainingDivergedError, ValidationError
from .metrics import ce_loss
from .model import SegmentationModel
from .propagation import init, step

LOSS_PAIR_FRAMES = 2   # losses attach to the 2nd and 3rd clip frames


class SGD:
    """Stochastic gradient descent; classic momentum when momentum > 0."""

    def __init__(self, learning_rate: float, momentum: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def apply(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.momentum > 0.0:
                v = self.velocity.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            p.data = p.data - self.learning_rate * g


@dataclass
class TrainResult:
    model: SegmentationModel
    losses: list[float] = field(default_factory=list)
    rng: np.random.Generator | None = None

    @property
    def steps(self) -> int:
        return len(self.losses)


def smoothed(losses: list[float], window: int) -> list[float]:
    """Trailing-window means; entry i averages losses[max(0, i+1-w) : i+1]."""
    out = []
    acc = 0.0
    for i, v in enumerate(losses):
        acc += v
        if i >= window:
            acc -= losses[i - window]
        out.append(acc / min(i + 1, window))
    return out


def clip_loss(model: SegmentationModel, clip: Clip, teacher_forcing: bool):
    """Forward one clip and return (loss tensor, per-frame predictions)."""
    state = init(model, clip.frames[0], clip.masks[0])
    preds = []
    for t in (1, 2):
        forced = clip.masks[t] if teacher_forcing else None
        state, pred = step(model, state, clip.frames[t], update_mask=forced)
        preds.append(pred)
    loss = ce_loss(list(zip(preds, clip.masks[1:])))
    return loss, preds


def _eligible(sequences: list[VideoSequence]) -> list[VideoSequence]:
    keep = []
    for seq in sequences:
        if seq.masks is None:
            warnings.warn(f"sequence {seq.name} has no masks; skipped for training")
        elif len(seq) < 3:
            warnings.warn(f"sequence {seq.name} has {len(seq)} < 3 frames; "
                          "skipped for training")
        else:
            keep.append(seq)
    return keep


def train(config: RunConfig, sequences: list[VideoSequence],
          log=None) -> TrainResult:
    """Run config.steps SGD updates over random clips from the sequences."""
    usable = _eligible(sequences)
    if not usable:
        raise ValidationError("no trainable sequence (need >= 3 frames with masks)")
    model = SegmentationModel(config.model_config(), seed=config.seed)
    rng = np.random.default_rng([config.seed, 1])   # clip-sampling stream
    streams = [sample_clips(seq, rng) for seq in usable]
    optimizer = SGD(config.learning_rate, config.momentum)
    result = TrainResult(model=model, rng=rng)
    for step_idx in range(config.steps):
        clip = next(streams[int(rng.integers(len(streams)))])
        model.zero_grad()
        with Tape() as tape:
            loss, _ = clip_loss(model, clip, config.teacher_forcing)
            value = loss.item()
            if not np.isfinite(value):
                tail = ", ".join(f"{v:.4g}" for v in result.losses[-5:])
                raise TrainingDivergedError(
                    f"non-finite loss {value} at step {step_idx} on clip "
                    f"{clip.sequence}[{clip.start}:{clip.start + 3}]; "
                    f"recent losses: [{tail}]; lower the learning rate")
            tape.backward(loss)
        optimizer.apply(model.parameters())
        result.losses.append(value)
        if log is not None and (step_idx + 1) % config.log_every == 0:
            window = smoothed(result.losses, config.loss_window)[-1]
            log(f"step {step_idx + 1}/{config.steps}  loss {value:.5f}  "
                f"smoothed {window:.5f}")
    return result

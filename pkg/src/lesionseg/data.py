"""Dataset IO in a DAVIS-2017-style directory layout, plus clip sampling.

Layout::

    root/
      JPEGImages/<sequence>/00000.pgm  (or .ppm)
      Annotations/<sequence>/00000.pgm
      ImageSets/train.txt  val.txt

Frames load as grayscale float64 in [0, 1] (color inputs are averaged
over channels), masks binarize at 128. Every sequence is center-padded
to a multiple of the encoder stride; the padding is recorded so
predictions can be cropped back to the original resolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ValidationError
from .netpbm import read_mask, read_netpbm, write_mask, write_pgm

LABELS = ("benign", "malignant", "synthetic")


@dataclass(frozen=True)
class Padding:
    """Rows/columns added on each side to reach a stride multiple."""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    @property
    def any(self) -> bool:
        return bool(self.top or self.bottom or self.left or self.right)


def pad_to_multiple(img: np.ndarray, stride: int,
                    mode: str = "edge") -> tuple[np.ndarray, Padding]:
    """Center-pad a (1, H, W) array so H and W divide by stride."""
    _, h, w = img.shape
    dh = (-h) % stride
    dw = (-w) % stride
    pad = Padding(top=dh // 2, bottom=dh - dh // 2, left=dw // 2, right=dw - dw // 2)
    if not pad.any:
        return img, pad
    spec = ((0, 0), (pad.top, pad.bottom), (pad.left, pad.right))
    if mode == "edge":
        out = np.pad(img, spec, mode="edge")
    else:
        out = np.pad(img, spec, mode="constant")
    return out, pad


def unpad(arr: np.ndarray, pad: Padding) -> np.ndarray:
    """Crop a (..., H, W) array back to the pre-padding resolution."""
    if not pad.any:
        return arr
    h, w = arr.shape[-2], arr.shape[-1]
    return arr[..., pad.top:h - pad.bottom, pad.left:w - pad.right]


@dataclass
class VideoSequence:
    """One video: frames, optional aligned masks, and padding metadata."""

    name: str
    frames: list[Tensor]
    masks: list[Tensor] | None
    label: str = "synthetic"
    padding: Padding = Padding()
    original_size: tuple[int, int] | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.masks is not None and len(self.masks) != len(self.frames):
            raise ValidationError(
                f"{self.name}: {len(self.masks)} masks for {len(self.frames)} frames")
        shapes = {f.shape for f in self.frames}
        if self.masks is not None:
            shapes |= {m.shape for m in self.masks}
        if len(shapes) > 1:
            raise ValidationError(f"{self.name}: mixed resolutions {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class Clip:
    """Three consecutive frames with ground truth, for one training step."""

    frames: tuple[Tensor, Tensor, Tensor]
    masks: tuple[Tensor, Tensor, Tensor]
    sequence: str
    start: int


def _to_gray(img: np.ndarray) -> np.ndarray:
    """(H, W) or (H, W, 3) in [0,1] -> (1, H, W) grayscale by channel mean."""
    if img.ndim == 3:
        img = img.mean(axis=2)
    return img[None, :, :]


def _infer_label(name: str) -> str:
    head = name.split("_")[0].lower()
    return head if head in ("benign", "malignant") else "synthetic"


def read_split(root: Path, split: str) -> list[str]:
    path = Path(root) / "ImageSets" / f"{split}.txt"
    if not path.is_file():
        raise FileNotFoundError(f"split file not found: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def _load_sequence(root: Path, name: str, stride: int) -> VideoSequence:
    frame_dir = root / "JPEGImages" / name
    mask_dir = root / "Annotations" / name
    frame_paths = sorted(list(frame_dir.glob("*.pgm")) + list(frame_dir.glob("*.ppm")),
                         key=lambda p: p.name)
    if not frame_paths:
        raise FileNotFoundError(f"no .pgm/.ppm frames under {frame_dir}")
    has_masks = mask_dir.is_dir()
    frames: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    for fp in frame_paths:
        frames.append(_to_gray(read_netpbm(fp)))
        if has_masks:
            mp = mask_dir / (fp.stem + ".pgm")
            if not mp.is_file():
                raise FileNotFoundError(
                    f"missing annotation {mp} for listed frame {fp.name}")
            masks.append(read_mask(mp)[None, :, :])
    base = frames[0].shape
    for i, arr in enumerate(frames):
        if arr.shape != base:
            raise ValidationError(
                f"{name}: frame {frame_paths[i].name} is {arr.shape[1:]}, first frame is {base[1:]}")
    for i, arr in enumerate(masks):
        if arr.shape != base:
            raise ValidationError(
                f"{name}: mask for {frame_paths[i].name} is {arr.shape[1:]}, frames are {base[1:]}")
    original = (base[1], base[2])
    padded_frames, pad = zip(*(pad_to_multiple(f, stride, "edge") for f in frames))
    pad = pad[0]
    padded_masks = [pad_to_multiple(m, stride, "constant")[0] for m in masks]
    return VideoSequence(
        name=name,
        frames=[Tensor(f) for f in padded_frames],
        masks=[Tensor(m) for m in padded_masks] if has_masks else None,
        label=_infer_label(name),
        padding=pad,
        original_size=original,
    )


def load_dataset(root, split: str | None = None, total_stride: int = 8) -> list[VideoSequence]:
    """Load every sequence under root (or just one split), name-sorted."""
    root = Path(root)
    img_root = root / "JPEGImages"
    if not img_root.is_dir():
        raise FileNotFoundError(f"dataset root {root} has no JPEGImages directory")
    names = sorted(p.name for p in img_root.iterdir() if p.is_dir())
    if split is not None:
        listed = read_split(root, split)
        missing = sorted(set(listed) - set(names))
        if missing:
            raise FileNotFoundError(
                f"{split}.txt lists sequences with no frame directory: {missing[:5]}")
        names = sorted(listed)
    return [_load_sequence(root, n, total_stride) for n in names]


def sample_clips(seq: VideoSequence, rng: np.random.Generator):
    """Endless stream of random 3-frame training clips from one sequence."""
    if seq.masks is None:
        raise ValidationError(f"{seq.name}: clip sampling needs ground-truth masks")
    n = len(seq)
    if n < 3:
        warnings.warn(f"sequence {seq.name} has {n} < 3 frames; skipped for training")
        return
    while True:
        start = int(rng.integers(0, n - 2))
        yield Clip(
            frames=tuple(seq.frames[start:start + 3]),
            masks=tuple(seq.masks[start:start + 3]),
            sequence=seq.name,
            start=start,
        )


def split_names(names: list[str], ratio: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded by-sequence shuffle into train/val name lists."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")
    order = list(names)
    np.random.default_rng(seed).shuffle(order)
    cut = max(1, min(len(order) - 1, int(round(len(order) * ratio))))
    return sorted(order[:cut]), sorted(order[cut:])


def write_sequence(root, seq_name: str, frames: list[np.ndarray],
                   masks: list[np.ndarray]) -> None:
    """Write one sequence's frames and masks into the directory layout."""
    root = Path(root)
    frame_dir = root / "JPEGImages" / seq_name
    mask_dir = root / "Annotations" / seq_name
    frame_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for i, (frame, mask) in enumerate(zip(frames, masks)):
        arr = frame[0] if frame.ndim == 3 else frame
        write_pgm(frame_dir / f"{i:05d}.pgm", np.clip(arr, 0.0, 1.0))
        write_mask(mask_dir / f"{i:05d}.pgm", mask)


def write_split_files(root, train: list[str], val: list[str]) -> None:
    sets = Path(root) / "ImageSets"
    sets.mkdir(parents=True, exist_ok=True)
    (sets / "train.txt").write_text("".join(n + "\n" for n in train))
    (sets / "val.txt").write_text("".join(n + "\n" for n in val))

"""Binary netpbm (P5/P6) reading and writing.

The on-disk codec for the whole package: grayscale frames and masks are P5,
color frames P6, always 8-bit with maxval 255.  Round trips are byte-exact,
which the persistence tests rely on.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import ValidationError

_WHITESPACE = b" \t\r\n"


def _read_token(stream: io.BufferedIOBase) -> bytes:
    """Next header token, skipping whitespace and '#' comments."""
    token = b""
    while True:
        ch = stream.read(1)
        if not ch:
            if token:
                return token
            raise ValueError("unexpected end of netpbm header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = stream.read(1)
            continue
        if ch in _WHITESPACE:
            if token:
                return token
            continue
        token += ch


def read_netpbm(path: str | Path) -> np.ndarray:
    """Read a binary PGM/PPM file.

    Returns a float64 array in [0, 1]: shape (H, W) for P5 and (H, W, 3)
    for P6.
    """
    path = Path(path)
    with path.open("rb") as fh:
        magic = _read_token(fh)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: unsupported netpbm magic {magic!r} (want P5 or P6)")
        width = int(_read_token(fh))
        height = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if not 0 < maxval < 256:
            raise ValueError(f"{path}: only 8-bit netpbm supported, maxval={maxval}")
        channels = 3 if magic == b"P6" else 1
        payload = fh.read(width * height * channels)
        if len(payload) != width * height * channels:
            raise ValueError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 3:
        return pixels.reshape(height, width, 3)
    return pixels.reshape(height, width)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W) array in [0, 1] as a binary PGM with maxval 255."""
    if image.ndim != 2:
        raise ValidationError(f"write_pgm expects (H, W), got shape {image.shape}")
    data = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W, 3) array in [0, 1] as a binary PPM with maxval 255."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"write_ppm expects (H, W, 3), got shape {image.shape}")
    data = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a binary mask as P5 with foreground 255.

    The mask must be strictly binary; probability maps have to be
    thresholded first.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.ndim != 2:
        raise ValidationError(f"write_mask expects a 2-d mask, got shape {mask.shape}")
    values = np.unique(mask)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValidationError("write_mask: mask is not binary; threshold it first")
    write_pgm(path, mask)


def read_mask(path: str | Path) -> np.ndarray:
    """Read a P5 mask, binarizing at pixel value 128 (>= 128 is foreground)."""
    image = read_netpbm(path)
    if image.ndim != 2:
        raise ValidationError(f"{path}: masks must be single-channel PGM")
    return (image >= 128.0 / 255.0).astype(np.float64)

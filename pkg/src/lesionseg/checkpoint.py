"""Checkpoint persistence: a text manifest plus one little-endian
float32 blob, with the effective config, step count, and RNG state.

Layout of a checkpoint directory::

    manifest.txt   one line per tensor: "name = shape @ byte_offset"
    params.bin     all tensors, row-major float32, little-endian
    config.ini     effective RunConfig echo
    state.txt      step count and the sampler's bit-generator state (json)

Saving quantizes the in-memory parameters to their float32 values, so a
model that has just been saved is bitwise identical to its reload and
evaluation metrics survive the round trip unchanged.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig, config_to_text, load_config
from .errors import ValidationError
from .model import SegmentationModel

MANIFEST = "manifest.txt"
BLOB = "params.bin"
CONFIG = "config.ini"
STATE = "state.txt"


def save_checkpoint(path, model: SegmentationModel, run_config: RunConfig,
                    step: int = 0, rng: np.random.Generator | None = None) -> None:
    """Write the checkpoint directory; quantizes model params to float32."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    chunks = []
    offset = 0
    for name, p in model.parameters().items():
        quantized = p.data.astype("<f4")
        p.data = quantized.astype(np.float64)   # keep memory == disk
        shape = "x".join(str(d) for d in p.shape)
        lines.append(f"{name} = {shape} @ {offset}\n")
        chunks.append(quantized.tobytes())
        offset += quantized.nbytes
    (path / MANIFEST).write_text("".join(lines))
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / CONFIG).write_text(config_to_text(run_config))
    state = {"step": int(step)}
    if rng is not None:
        state["rng"] = rng.bit_generator.state
    (path / STATE).write_text(json.dumps(state, indent=1) + "\n")


def _parse_manifest(text: str) -> list[tuple[str, tuple[int, ...], int]]:
    entries = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            name, rest = line.split(" = ", 1)
            shape_part, offset_part = rest.split(" @ ", 1)
            shape = tuple(int(d) for d in shape_part.split("x"))
            entries.append((name, shape, int(offset_part)))
        except ValueError as exc:
            raise ValidationError(f"malformed manifest line: {line!r}") from exc
    return entries


def load_checkpoint(path) -> tuple[SegmentationModel, RunConfig, int, dict | None]:
    """Rebuild the model from a checkpoint directory.

    Returns (model, run_config, step, rng_state). Parameters come back at
    float64 working precision holding exactly their float32 values.
    """
    path = Path(path)
    for required in (MANIFEST, BLOB, CONFIG, STATE):
        if not (path / required).is_file():
            raise FileNotFoundError(f"checkpoint {path} is missing {required}")
    run_config = load_config(path / CONFIG)
    model = SegmentationModel(run_config.model_config(), seed=run_config.seed)
    blob = (path / BLOB).read_bytes()
    arrays = {}
    for name, shape, offset in _parse_manifest((path / MANIFEST).read_text()):
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise ValidationError(f"checkpoint blob truncated for tensor {name}")
        flat = np.frombuffer(blob[offset:end], dtype="<f4")
        arrays[name] = flat.astype(np.float64).reshape(shape)
    model.load_parameter_data(arrays)
    state = json.loads((path / STATE).read_text())
    return model, run_config, int(state.get("step", 0)), state.get("rng")

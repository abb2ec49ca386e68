"""
The FIRE1 binary envelope and model checkpoints.

Layout:

    5 bytes   magic b"FIRE1"
    4 bytes   little-endian uint32 metadata length
    N bytes   UTF-8 JSON metadata
    rest      little-endian float32 arrays, concatenated in declared order

Checkpoints store the architecture, taps, seed, epoch count and dataset digest in the
metadata and every layer parameter in layer order. The same envelope carries
DirectionState dumps (see ``direction.save_state``).
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from fire_repair.errors import FormatError, ShapeError
from fire_repair.model import LayeredModel

logger = logging.getLogger(__name__)

MAGIC = b"FIRE1"
_LENGTH = struct.Struct("<I")
_HEADER = len(MAGIC) + _LENGTH.size


def write_envelope(path: str | Path, metadata: dict[str, Any], arrays: Sequence[np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(meta)))
        f.write(meta)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_envelope(path: str | Path) -> tuple[dict[str, Any], bytes]:
    """Return (metadata, raw payload bytes)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER or data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a FIRE1 file")
    (length,) = _LENGTH.unpack_from(data, len(MAGIC))
    if _HEADER + length > len(data):
        raise FormatError(f"{path}: truncated metadata")
    try:
        metadata = json.loads(data[_HEADER:_HEADER + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad metadata ({exc})") from None
    return metadata, data[_HEADER + length:]


def split_payload(payload: bytes, shapes: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Cut a float32 payload into arrays of the given shapes; the sizes must add up exactly."""
    counts = [int(np.prod(shape)) for shape in shapes]
    flat = np.frombuffer(payload, dtype="<f4")
    if flat.size * 4 != len(payload) or flat.size != sum(counts):
        raise FormatError(f"Payload holds {len(payload)} bytes, metadata declares {sum(counts)} float32 values")
    arrays = []
    offset = 0
    for shape, count in zip(shapes, counts):
        arrays.append(flat[offset:offset + count].astype(np.float32).reshape(tuple(shape)))
        offset += count
    return arrays


def save_checkpoint(
    path: str | Path,
    model: LayeredModel,
    *,
    seed: int,
    epochs: int,
    dataset_digest: str | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    params = model.parameters()
    metadata = {
        "architecture": model.architecture(),
        "input_shape": list(model.input_shape),
        "taps": list(model.taps),
        "num_classes": model.num_classes,
        "seed": seed,
        "epochs": epochs,
        "dataset_digest": dataset_digest,
        "param_shapes": [list(p.shape) for p in params],
        "param_counts": [int(p.size) for p in params],
    }
    if extra:
        metadata["extra"] = extra
    write_envelope(path, metadata, params)
    logger.debug("saved checkpoint %s (%d parameter arrays)", path, len(params))


def load_checkpoint(path: str | Path) -> tuple[LayeredModel, dict[str, Any]]:
    """Load a checkpoint; returns the model and its metadata.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        FormatError: If the file is not a valid checkpoint.
    """
    metadata, payload = read_envelope(path)
    try:
        model = LayeredModel.from_architecture(
            metadata["architecture"], tuple(metadata["input_shape"]), metadata["taps"], metadata["num_classes"]
        )
        shapes = metadata["param_shapes"]
    except KeyError as exc:
        raise FormatError(f"{path}: metadata lacks {exc}") from None
    if len(shapes) != sum(len(layer.param_names) for layer in model.layers):
        raise FormatError(f"{path}: {len(shapes)} parameter arrays do not match the architecture")
    arrays = iter(split_payload(payload, shapes))
    for layer in model.layers:
        if layer.param_names:
            try:
                layer.set_params({name: next(arrays) for name in layer.param_names})
            except ShapeError as exc:
                raise FormatError(f"{path}: {exc}") from None
    logger.debug("loaded checkpoint %s", path)
    return model, metadata

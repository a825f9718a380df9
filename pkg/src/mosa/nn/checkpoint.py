"""Checkpoint file: length-prefixed JSON header followed by raw float32 data.

Layout::

    uint64 LE   header length in bytes
    bytes       UTF-8 JSON {"format_version", "config", "parameters": [{name, shape}]}
    float32 LE  every parameter, row-major, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .core import ParameterSet

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ParameterSet, config: dict) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in params.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    offset = 8 + n
    state: Dict[str, np.ndarray] = {}
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = data[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        state[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        offset += 4 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return state, header["config"]

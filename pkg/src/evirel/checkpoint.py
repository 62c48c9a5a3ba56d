"""Single-file checkpoint format: one JSON header line + raw little-endian f64 payloads.

The header records the format version, arbitrary JSON metadata, and the
name/shape of each tensor in payload order. Payloads are row-major float64
bytes, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    """Write named float64 arrays plus metadata to a single file.

    tensors maps name -> array-like; insertion order fixes payload order.
    """
    arrays = {name: np.ascontiguousarray(np.asarray(t.data if hasattr(t, "data") else t,
                                                    dtype=np.float64))
              for name, t in tensors.items()}
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(a.shape)} for name, a in arrays.items()],
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    if "\n" in line:
        raise CheckpointError("checkpoint header must be a single line")
    with open(path, "wb") as f:
        f.write(line.encode("utf-8") + b"\n")
        for a in arrays.values():
            f.write(a.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (dict name -> float64 ndarray, meta dict)."""
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"cannot parse checkpoint header: {e}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"truncated payload for tensor '{entry['name']}'")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError("trailing bytes after last tensor payload")
    return tensors, header.get("meta", {})

"""Checkpoint format: manifest.json describing named float32 blobs plus
weights.bin holding them back to back, little endian. Round trips are
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


def save_checkpoint(directory, named_arrays: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    blobs = []
    offset = 0
    for name, arr in named_arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        raw = data.tobytes()
        manifest.append({
            "name": name,
            "shape": [int(s) for s in data.shape],
            "dtype": "f32le",
            "offset": offset,
            "len_bytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    with open(directory / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    (directory / WEIGHTS).write_bytes(b"".join(blobs))


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    try:
        with open(directory / MANIFEST) as fh:
            manifest = json.load(fh)
        raw = (directory / WEIGHTS).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint {directory}: missing {exc.filename}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {directory}: bad manifest ({exc})") from None
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        if entry.get("dtype") != "f32le":
            raise DataError(f"checkpoint {directory}: unsupported dtype {entry.get('dtype')!r}")
        lo, n = entry["offset"], entry["len_bytes"]
        if lo < 0 or lo + n > len(raw):
            raise DataError(f"checkpoint {directory}: blob {entry['name']!r} out of range")
        arr = np.frombuffer(raw, dtype="<f4", count=n // 4, offset=lo)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) * 4 != n:
            raise DataError(f"checkpoint {directory}: blob {entry['name']!r} shape/length mismatch")
        out[entry["name"]] = arr.reshape(shape).copy()
    return out

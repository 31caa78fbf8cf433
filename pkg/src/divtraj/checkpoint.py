"""Flat binary parameter checkpoints and raster blobs.

Checkpoint layout (all integers and floats little-endian):

    magic   8 bytes  b"DTRJCKPT"
    version u32      currently 1
    count   u32      number of entries
    entry:  u16 name length, UTF-8 name,
            u8 ndim, u32 dims[ndim],
            f64 values (row-major)

Entries are written sorted by name so files are byte-reproducible.
Raster blobs use the same conventions with magic b"DTRJRAST" and a
fixed H, W, C header.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import ConfigError

CKPT_MAGIC = b"DTRJCKPT"
RASTER_MAGIC = b"DTRJRAST"
FORMAT_VERSION = 1


def save_arrays(path, arrays: Dict[str, np.ndarray]):
    """Write a name -> array mapping in the flat checkpoint format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.array(arrays[name], dtype=np.float64, order="C", copy=True)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f8").tobytes(order="C"))


def load_arrays(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CKPT_MAGIC:
            raise ConfigError(f"{path}: not a parameter checkpoint (bad magic {magic!r})")
        version, count = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = np.array(data, dtype=np.float64, order="C", copy=True)
        return out


def save_raster(path, grid: np.ndarray):
    """Write an H x W x C float64 raster blob."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ConfigError(f"raster blob expects H x W x C, got shape {grid.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w, c = grid.shape
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC)
        f.write(struct.pack("<IIII", FORMAT_VERSION, h, w, c))
        f.write(grid.astype("<f8").tobytes(order="C"))


def load_raster(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != RASTER_MAGIC:
            raise ConfigError(f"{path}: not a raster blob (bad magic {magic!r})")
        version, h, w, c = struct.unpack("<IIII", f.read(16))
        if version != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported raster version {version}")
        data = np.frombuffer(f.read(8 * h * w * c), dtype="<f8")
        return np.ascontiguousarray(data.reshape(h, w, c))


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable architecture config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_sidecar(path, config: dict):
    """Write the architecture-config JSON sidecar next to a checkpoint."""
    payload = {"config": config, "hash": config_hash(config)}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_sidecar(path) -> dict:
    payload = json.loads(Path(path).read_text())
    config = payload["config"]
    if config_hash(config) != payload.get("hash"):
        raise ConfigError(f"{path}: architecture config hash mismatch")
    return config

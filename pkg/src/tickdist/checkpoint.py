"""Binary parameter checkpoints and loss-history CSV files.

Checkpoint layout (all integers little-endian):

    magic   4 bytes  b"TKDT"
    version u32      currently 1
    count   u32      number of named tensors
    entry   repeated count times:
        name_len u16, name utf-8 bytes,
        ndim u8, dims u32 * ndim,
        data float64 little-endian, row-major
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TKDT"
VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint file fails structural validation."""


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{ndim}I", data, offset) if ndim else ()
            offset += 4 * ndim
            n_items = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=n_items, offset=offset).reshape(dims)
            offset += 8 * n_items
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return out


def write_loss_history(path: str | Path, history: list[tuple[int, int, float]]) -> None:
    """Write `epoch,step,loss` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss"])
        for epoch, step, loss in history:
            writer.writerow([epoch, step, repr(float(loss))])


def read_loss_history(path: str | Path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["epoch", "step", "loss"]:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(int(e), int(s), float(l)) for e, s, l in reader]

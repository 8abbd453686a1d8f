"""MOTB container: writer and structural validator.

The layout is eight magic bytes "MOTB0001", five little-endian u32 fields
(joints, fps, frames, action-label bytes, subject-label bytes), the two
UTF-8 labels, then frames * joints * 3 float32 values row-major.  Both
directions are implemented here from the byte layout alone -- no import
from the consumer -- so validation stays an independent check on whatever
produced the files.
"""

from __future__ import annotations

import glob
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MOTB0001"
HEADER = struct.Struct("<5I")


def encode(action: str, subject: str, fps: int, frames: np.ndarray) -> bytes:
    """Serialise one clip; `frames` is (F, 3K) and is stored as float32."""
    data = np.ascontiguousarray(frames, dtype="<f4")
    if data.ndim != 2 or data.shape[1] % 3:
        raise ValueError(f"frames must be (F, 3K), got {data.shape}")
    a = action.encode("utf-8")
    s = subject.encode("utf-8")
    head = HEADER.pack(data.shape[1] // 3, fps, data.shape[0], len(a), len(s))
    return MAGIC + head + a + s + data.tobytes()


@dataclass
class FileReport:
    path: str
    ok: bool
    reason: str  # empty when ok
    joints: int = 0
    fps: int = 0
    frames: int = 0


def check_bytes(blob: bytes, name: str = "<bytes>") -> FileReport:
    """Structural validation: magic, header arithmetic, label encoding,
    payload size, finiteness.  Never raises; the verdict is the report."""
    least = len(MAGIC) + HEADER.size
    if len(blob) < least:
        return FileReport(name, False, f"header needs {least} bytes, file has {len(blob)}")
    if blob[: len(MAGIC)] != MAGIC:
        return FileReport(name, False, f"bad magic {blob[:len(MAGIC)]!r}")
    joints, fps, frames, alen, slen = HEADER.unpack(blob[len(MAGIC):least])
    offset = least + alen + slen
    if len(blob) < offset:
        return FileReport(name, False, "label bytes cut short", joints, fps, frames)
    try:
        blob[least: least + alen].decode("utf-8")
        blob[least + alen: offset].decode("utf-8")
    except UnicodeDecodeError:
        return FileReport(name, False, "labels are not UTF-8", joints, fps, frames)
    want = frames * joints * 3 * 4
    got = len(blob) - offset
    if got < want:
        return FileReport(name, False, f"payload truncated: {got} bytes, header promises {want}",
                          joints, fps, frames)
    if got > want:
        return FileReport(name, False, f"{got - want} trailing bytes after the payload",
                          joints, fps, frames)
    values = np.frombuffer(blob, dtype="<f4", count=frames * joints * 3, offset=offset)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(values.size - np.count_nonzero(finite))
        return FileReport(name, False, f"{bad} non-finite frame values", joints, fps, frames)
    return FileReport(name, True, "", joints, fps, frames)


def check_file(path: str) -> FileReport:
    with open(path, "rb") as fh:
        return check_bytes(fh.read(), path)


def check_tree(root: str) -> list:
    """Validate every .motb under `root` (recursively), sorted by path."""
    paths = sorted(glob.glob(os.path.join(root, "**", "*.motb"), recursive=True))
    return [check_file(p) for p in paths]

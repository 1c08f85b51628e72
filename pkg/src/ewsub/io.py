"""File formats: MSUB datasets, selection-plan JSON, ranker bundles, atomic writes.

MSUB layout (all little-endian)::

    "MSUB"  u32 version=1  u32 d  u32 n_frames  u32 n_snr  i16[n_snr] snr list
    n_frames x { u8 label, i16 snr_db, f32[d] I, f32[d] Q }
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .dataset import NUM_CLASSES, LabeledDataset
from .search import PlanValidationError, SelectionPlan

MSUB_MAGIC = b"MSUB"
MSUB_VERSION = 1
MSUB_HEADER = struct.Struct("<4sIIII")


class MsubFormatError(ValueError):
    """Malformed MSUB data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, frame: int | None = None):
        where = f"byte {offset}" + (f", frame {frame}" if frame is not None else "")
        super().__init__(f"{message} ({where})")
        self.offset = offset
        self.frame = frame


def atomic_write(path: str | os.PathLike, data: bytes | str) -> Path:
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _frame_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "u1"), ("snr", "<i2"), ("x", "<f4", (2, d))])


def _snr_list(ds: LabeledDataset) -> list[int]:
    grid = ds.meta.get("snr_grid")
    return [int(s) for s in grid] if grid is not None else ds.snr_values


def encode_msub(ds: LabeledDataset) -> bytes:
    snrs = _snr_list(ds)
    if any(not -32768 <= s <= 32767 for s in snrs):
        raise ValueError("SNR values must fit in int16")
    if len(ds) and (ds.labels.min() < 0 or ds.labels.max() > 255):
        raise ValueError("labels must fit in uint8")
    header = MSUB_HEADER.pack(MSUB_MAGIC, MSUB_VERSION, ds.d, len(ds), len(snrs))
    body = np.empty(len(ds), dtype=_frame_dtype(ds.d))
    body["label"] = ds.labels
    body["snr"] = ds.snr
    body["x"] = ds.x
    return header + np.asarray(snrs, dtype="<i2").tobytes() + body.tobytes()


def decode_msub(blob: bytes) -> LabeledDataset:
    if len(blob) < MSUB_HEADER.size:
        raise MsubFormatError(f"header needs {MSUB_HEADER.size} bytes, file has {len(blob)}", len(blob))
    magic, version, d, count, n_snr = MSUB_HEADER.unpack_from(blob, 0)
    if magic != MSUB_MAGIC:
        raise MsubFormatError(f"bad magic {magic!r}", 0)
    if version != MSUB_VERSION:
        raise MsubFormatError(f"unsupported version {version}", 4)
    if d < 1:
        raise MsubFormatError("frame width d must be positive", 8)
    pos = MSUB_HEADER.size
    if len(blob) < pos + 2 * n_snr:
        raise MsubFormatError("truncated SNR list", len(blob))
    snrs = np.frombuffer(blob, dtype="<i2", count=n_snr, offset=pos).astype(np.int64)
    pos += 2 * n_snr
    dt = _frame_dtype(d)
    available = (len(blob) - pos) // dt.itemsize
    if available < count:
        raise MsubFormatError(f"truncated: {count} frames declared", pos + available * dt.itemsize, available)
    if len(blob) > pos + count * dt.itemsize:
        raise MsubFormatError("trailing bytes after the last frame", pos + count * dt.itemsize)
    body = np.frombuffer(blob, dtype=dt, count=count, offset=pos)
    labels = body["label"].astype(np.int64)
    snr = body["snr"].astype(np.int64)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise MsubFormatError(f"label {labels[i]} out of range", pos + i * dt.itemsize, i)
    bad = np.flatnonzero(~np.isin(snr, snrs))
    if bad.size:
        i = int(bad[0])
        raise MsubFormatError(f"SNR {snr[i]} not in the header list", pos + i * dt.itemsize + 1, i)
    x = np.array(body["x"], dtype=np.float32)
    return LabeledDataset(x, labels, snr, {"snr_grid": [int(s) for s in snrs]})


def save_dataset(path, ds: LabeledDataset) -> Path:
    return atomic_write(path, encode_msub(ds))


def load_dataset(path) -> LabeledDataset:
    return decode_msub(Path(path).read_bytes())


def save_plan(path, plan: SelectionPlan) -> Path:
    plan.validate()
    return atomic_write(path, plan.dumps())


def load_plan(path, snr_grid=None, d: int | None = None) -> SelectionPlan:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PlanValidationError([f"not valid JSON: {exc}"]) from None
    if not isinstance(obj, dict):
        raise PlanValidationError(["plan must be a JSON object"])
    plan = SelectionPlan.from_json(obj)
    problems = plan.problems(snr_grid)
    if d is not None and plan.d != d:
        problems.append(f"plan is for d={plan.d}, data has d={d}")
    if problems:
        raise PlanValidationError(problems)
    return plan

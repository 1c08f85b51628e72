"""Labeled I/Q frame containers and the split helpers shared by every stage."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Iterator

import numpy as np


class ModType(IntEnum):
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3
    QAM64 = 4
    BFSK = 5
    CPFSK = 6
    PAM4 = 7
    WBFM = 8
    AMDSB = 9

    @property
    def is_analog(self) -> bool:
        return self in (ModType.WBFM, ModType.AMDSB)


NUM_CLASSES = len(ModType)
CLASS_NAMES = [m.name for m in ModType]


@dataclass(frozen=True)
class FrameExample:
    iq: np.ndarray
    label: ModType
    snr_db: int


@dataclass
class LabeledDataset:
    """Frames stored as one ``(N, 2, d)`` float32 block.

    Row 0 of each frame is the in-phase component, row 1 the quadrature.
    Frame order is meaningful: frames cut from the same waveform are adjacent,
    which the contiguous splits below rely on.
    """

    x: np.ndarray
    labels: np.ndarray
    snr: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)
    clean: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.snr = np.asarray(self.snr, dtype=np.int64)
        if self.x.ndim != 3 or self.x.shape[1] != 2:
            raise ValueError(f"frames must have shape (N, 2, d), got {self.x.shape}")
        n = self.x.shape[0]
        if self.labels.shape != (n,) or self.snr.shape != (n,):
            raise ValueError("labels and snr must have one entry per frame")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[2]

    @property
    def snr_values(self) -> list[int]:
        return sorted(int(s) for s in np.unique(self.snr))

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        clean = None if self.clean is None else self.clean[idx]
        return LabeledDataset(self.x[idx], self.labels[idx], self.snr[idx], dict(self.meta), clean)

    def where(self, snr: int | None = None, labels: tuple[int, ...] | None = None) -> "LabeledDataset":
        keep = np.ones(len(self), dtype=bool)
        if snr is not None:
            keep &= self.snr == snr
        if labels is not None:
            keep &= np.isin(self.labels, labels)
        return self.subset(np.flatnonzero(keep))

    def frames(self) -> Iterator[FrameExample]:
        for i in range(len(self)):
            yield FrameExample(self.x[i], ModType(int(self.labels[i])), int(self.snr[i]))

    def cell_counts(self) -> dict[tuple[int, int], int]:
        keys, counts = np.unique(np.stack([self.labels, self.snr], axis=1), axis=0, return_counts=True)
        return {(int(c), int(s)): int(n) for (c, s), n in zip(keys, counts)}


def stratified_split(ds: LabeledDataset, holdout: float = 0.25) -> tuple[LabeledDataset, LabeledDataset]:
    """Split every (class, SNR) cell into a leading part and a held-out tail.

    The tail is contiguous in storage order so overlapping windows of one
    waveform stay on the same side except at one boundary per cell.
    """
    if not 0.0 < holdout < 1.0:
        raise ValueError("holdout must be in (0, 1)")
    keep, held = [], []
    for (c, s) in sorted(ds.cell_counts()):
        idx = np.flatnonzero((ds.labels == c) & (ds.snr == s))
        n_held = int(round(len(idx) * holdout))
        if len(idx) >= 2:
            n_held = min(max(n_held, 1), len(idx) - 1)
        keep.append(idx[: len(idx) - n_held])
        held.append(idx[len(idx) - n_held:])
    keep_idx = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    held_idx = np.sort(np.concatenate(held)) if held else np.zeros(0, dtype=np.int64)
    return ds.subset(keep_idx), ds.subset(held_idx)


@dataclass
class SnrPartition:
    """Training-side data of one SNR: a fitting part and a ranking/validation part."""

    snr: int
    fit_x: np.ndarray
    fit_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray

    @property
    def d(self) -> int:
        return self.val_x.shape[2]


def partition_by_snr(fit: LabeledDataset, val: LabeledDataset) -> list[SnrPartition]:
    parts = []
    for s in sorted(set(fit.snr_values) | set(val.snr_values)):
        f, v = fit.where(snr=s), val.where(snr=s)
        parts.append(SnrPartition(s, f.x, f.labels, v.x, v.labels))
    return parts

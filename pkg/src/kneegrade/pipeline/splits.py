"""Seeded dataset splitting and flip augmentation.

Splits are disjoint, exhaustive, and deterministic given the seed; stratified
splits allocate per grade by largest remainder, so per-grade ratios hold
within one sample. Flip augmentation applies to the training split only and
is guarded here (the orchestrator passes the split's role).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import DataError
from .manifest import DatasetManifest

__all__ = [
    "SplitSpec",
    "JointSample",
    "allocate_counts",
    "partition_indices",
    "split_dataset",
    "augment_flips",
]


class JointSample(NamedTuple):
    """One extracted knee-joint image ready for grading."""

    sample_id: str
    grade: int
    pixels: np.ndarray  # (H, W) float64 in [0, 1]


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple  # (train, val, test)
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        r = tuple(float(v) for v in self.ratios)
        if len(r) != 3 or any(v < 0 for v in r):
            raise ValueError(f"ratios must be 3 non-negative values, got {self.ratios}")
        if abs(sum(r) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(r)}")
        object.__setattr__(self, "ratios", r)


def allocate_counts(n: int, ratios) -> list:
    """Split n into integer counts by largest remainder (ties favor the
    earlier split)."""
    exact = [n * r for r in ratios]
    base = [int(np.floor(e)) for e in exact]
    remainder = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:remainder]:
        base[i] += 1
    return base


def partition_indices(grades, spec: SplitSpec) -> tuple:
    """Index lists (train, val, test) over items with the given grades."""
    grades = np.asarray(grades, dtype=np.int64)
    n = grades.shape[0]
    rng = np.random.default_rng(spec.seed)
    parts = ([], [], [])
    if spec.stratify:
        for g in sorted(set(grades.tolist())):
            idx = np.flatnonzero(grades == g)
            idx = idx[rng.permutation(idx.shape[0])]
            counts = allocate_counts(idx.shape[0], spec.ratios)
            start = 0
            for part, count in zip(parts, counts):
                part.extend(idx[start : start + count].tolist())
                start += count
    else:
        idx = rng.permutation(n)
        counts = allocate_counts(n, spec.ratios)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(idx[start : start + count].tolist())
            start += count
    for ratio, part, name in zip(spec.ratios, parts, ("train", "val", "test")):
        if ratio > 0 and not part:
            raise DataError(
                f"{name} split is empty: ratio {ratio} infeasible for {n} samples"
            )
    return tuple(sorted(p) for p in parts)


def split_dataset(manifest: DatasetManifest, spec: SplitSpec) -> tuple:
    """Partition a manifest into (train, val, test) manifests."""
    grades = [r.grade for r in manifest.records]
    parts = partition_indices(grades, spec)
    return tuple(
        DatasetManifest(tuple(manifest.records[i] for i in idx)) for idx in parts
    )


def augment_flips(samples, role: str = "train") -> list:
    """Add a horizontally flipped twin (same grade) for every sample.

    Only the training split may be augmented; passing any other role is an
    error, which is how the orchestrator enforces the train-only contract.
    """
    if role != "train":
        raise ValueError(f"flip augmentation is train-only, refused for role {role!r}")
    out = list(samples)
    for s in samples:
        out.append(JointSample(s.sample_id + "+flip", s.grade, np.fliplr(s.pixels).copy()))
    return out

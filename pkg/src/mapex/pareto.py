"""Objective-space analytics: dominance, fronts, hypervolume, sparsity, gap selection.

All objectives are maximised.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CannotExtractError,
    DegenerateWeightsError,
    DimensionError,
    UnsupportedDimensionError,
)


def dominates(v, u) -> bool:
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if v.shape != u.shape:
        raise DimensionError(f"cannot compare vectors of shapes {v.shape} and {u.shape}")
    return bool(np.all(v >= u) and np.any(v > u))


def non_dominated(points) -> list[int]:
    """Indices of points dominated by no other point (duplicates are all kept)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return []
    if pts.ndim != 2:
        raise DimensionError("points must be a 2-D array (n_points, n_objectives)")
    n = len(pts)
    # lexicographic descending order: a point can only be dominated by one earlier in this order
    order = np.lexsort(tuple(-pts[:, j] for j in reversed(range(pts.shape[1]))))
    keep = np.zeros(n, dtype=bool)
    front = np.empty_like(pts)
    size = 0
    for i in order:
        p = pts[i]
        f = front[:size]
        if not np.any(np.all(f >= p, axis=1) & np.any(f > p, axis=1)):
            keep[i] = True
            front[size] = p
            size += 1
    return np.flatnonzero(keep).tolist()


def hypervolume_2d(front, reference) -> float:
    """Exact area dominated by ``front`` and bounded below by ``reference``."""
    ref = np.asarray(reference, dtype=np.float64)
    pts = np.asarray(front, dtype=np.float64)
    if ref.shape != (2,):
        raise UnsupportedDimensionError("hypervolume_2d supports exactly 2 objectives")
    if pts.size == 0:
        return 0.0
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise UnsupportedDimensionError("hypervolume_2d supports exactly 2 objectives")
    pts = pts[np.all(pts > ref, axis=1)]
    if len(pts) == 0:
        return 0.0
    pts = pts[np.lexsort((-pts[:, 1], -pts[:, 0]))]
    area = 0.0
    top = ref[1]
    for x, y in pts:
        if y > top:
            area += (x - ref[0]) * (y - top)
            top = y
    return float(area)


def sparsity(front) -> float:
    """Mean distance between consecutive points sorted by the first objective."""
    pts = np.asarray(front, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    pts = pts[np.lexsort(tuple(pts[:, j] for j in reversed(range(pts.shape[1]))))]
    return float(np.mean(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def reference_point(points, margin: float = 0.1) -> np.ndarray:
    """Component-wise minimum minus ``margin`` times the per-objective range."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    return lo - margin * span


def target_weights(centroid) -> np.ndarray:
    """Clamp negative components to zero and normalise to unit L2 norm."""
    v = np.clip(np.asarray(centroid, dtype=np.float64), 0.0, None)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DegenerateWeightsError(f"centroid {centroid} has no positive component")
    return v / norm


@dataclass
class ArchiveEntry:
    policy_id: str
    returns: np.ndarray


@dataclass
class ParetoArchive:
    """Every evaluated policy, with the non-dominated subset computed on demand."""

    reference: np.ndarray
    entries: list[ArchiveEntry] = field(default_factory=list)

    def add(self, policy_id: str, returns) -> None:
        r = np.asarray(returns, dtype=np.float64)
        if r.shape != np.shape(self.reference):
            raise DimensionError("returns length does not match the reference point")
        if any(e.policy_id == policy_id for e in self.entries):
            raise ValueError(f"duplicate policy id {policy_id!r}")
        self.entries.append(ArchiveEntry(policy_id, r))

    def __len__(self) -> int:
        return len(self.entries)

    def returns(self, policy_id: str) -> np.ndarray:
        for e in self.entries:
            if e.policy_id == policy_id:
                return e.returns
        raise KeyError(policy_id)

    @property
    def n_objectives(self) -> int:
        return len(self.reference)

    def front(self) -> list[ArchiveEntry]:
        """Non-dominated entries sorted by the first objective."""
        if not self.entries:
            return []
        idx = non_dominated([e.returns for e in self.entries])
        front = [self.entries[i] for i in idx]
        return sorted(front, key=lambda e: tuple(e.returns))

    def front_points(self) -> np.ndarray:
        return np.array([e.returns for e in self.front()]).reshape(-1, self.n_objectives)

    def hypervolume(self) -> float:
        return hypervolume_2d(self.front_points(), self.reference)

    def sparsity(self) -> float:
        return sparsity(self.front_points())

    def front_csv(self) -> str:
        return entries_csv(self.front(), self.n_objectives)


def entries_csv(entries: Sequence[ArchiveEntry], n_objectives: int) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["policy_id", *[f"J{i + 1}" for i in range(n_objectives)]])
    for e in entries:
        writer.writerow([e.policy_id, *[repr(float(x)) for x in e.returns]])
    return out.getvalue()


def read_entries_csv(text: str) -> list[ArchiveEntry]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "policy_id":
        raise ValueError("front CSV must start with a policy_id header")
    return [ArchiveEntry(r[0], np.array([float(x) for x in r[1:]])) for r in rows[1:] if r]


def select_gap(
    archive: ParetoArchive,
    rng: np.random.Generator,
    origin=None,
) -> tuple[tuple[str, str], np.ndarray]:
    """Pick a front edge with probability proportional to its length.

    Returns the identifiers of the edge's two endpoints and the unit target
    weights pointing at their midpoint. The midpoint is taken relative to
    ``origin`` (default: the objective-space origin); passing the archive's
    reference point keeps weights meaningful when returns are negative.
    """
    if archive.n_objectives != 2:
        raise UnsupportedDimensionError("gap selection is only defined for 2 objectives")
    front = archive.front()
    if len(front) < 2:
        raise CannotExtractError(f"front has {len(front)} point(s); at least 2 are needed")
    pts = np.array([e.returns for e in front])
    lengths = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = lengths.sum()
    if total <= 0.0:
        raise CannotExtractError("all front points coincide")
    edge = int(rng.choice(len(lengths), p=lengths / total))
    a, b = front[edge], front[edge + 1]
    centroid = (a.returns + b.returns) / 2.0
    if origin is not None:
        centroid = centroid - np.asarray(origin, dtype=np.float64)
    return (a.policy_id, b.policy_id), target_weights(centroid)

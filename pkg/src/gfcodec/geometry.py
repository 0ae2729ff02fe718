"""Deterministic farthest point sampling and exact k-nearest-neighbor search.

Both operations are exact (no approximation) and resolve distance ties by
lowest index, so encoder and decoder derive identical control points and
neighborhoods from the shared reference frame on any platform. Distances
accumulate in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .frames import GaussianFrame

_KNN_CHUNK = 256  # query rows per distance-matrix block


@dataclass(frozen=True)
class ControlPointSet:
    """FPS-selected Gaussians and their gathered attributes.

    indices     (Nc,) int64 into the source frame
    positions   (Nc, 3) float32, exact copies of the indexed positions
    attributes  (Nc, 7) float32: position then quaternion
    """

    indices: np.ndarray
    positions: np.ndarray
    attributes: np.ndarray

    @property
    def count(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True)
class NeighborMap:
    """K nearest targets per query, distances sorted ascending.

    indices    (Q, k) int64 target indices
    distances  (Q, k) float64 Euclidean distances
    """

    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])


def fps(positions: np.ndarray, count: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min farthest point sampling.

    Deterministic given start_index; max-min ties pick the lowest index.
    """
    pts = np.asarray(positions, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise DataError("fps: empty input")
    if not 1 <= count <= n:
        raise DataError(f"fps: count {count} outside [1, {n}]")
    if not 0 <= start_index < n:
        raise DataError(f"fps: start_index {start_index} outside [0, {n})")

    selected = np.empty(count, dtype=np.int64)
    selected[0] = start_index
    # min squared distance to the selected set; argmax (first occurrence)
    # implements the lowest-index tie break
    min_d2 = np.sum((pts - pts[start_index]) ** 2, axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        d2 = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return selected


def gather_control_points(frame: GaussianFrame, indices: np.ndarray) -> ControlPointSet:
    """Index out control-point positions and (position, quaternion) attributes."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DataError("gather_control_points: indices must be a non-empty 1-D array")
    if idx.min() < 0 or idx.max() >= frame.count:
        raise DataError("gather_control_points: index out of range")
    if np.unique(idx).size != idx.size:
        raise DataError("gather_control_points: duplicate index")
    positions = frame.positions[idx]
    attributes = np.concatenate([positions, frame.rotations[idx]], axis=1)
    return ControlPointSet(indices=idx, positions=positions, attributes=attributes)


def knn(queries: np.ndarray, targets: np.ndarray, k: int) -> NeighborMap:
    """Exact k nearest targets per query by Euclidean distance.

    Ties at the selection boundary and within the ordering resolve to the
    lowest target index. k is clipped to the target count.
    """
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape[0] == 0:
        raise DataError("knn: empty targets")
    if k < 1:
        raise DataError("knn: k must be >= 1")
    k = min(k, t.shape[0])

    nq = q.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d2 = np.empty((nq, k), dtype=np.float64)

    for lo in range(0, nq, _KNN_CHUNK):
        hi = min(lo + _KNN_CHUNK, nq)
        diff = q[lo:hi, None, :] - t[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        for row in range(d2.shape[0]):
            out_idx[lo + row], out_d2[lo + row] = _select_k(d2[row], k)

    return NeighborMap(indices=out_idx, distances=np.sqrt(out_d2))


def _select_k(d2: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest k entries of d2 ordered by (distance, index)."""
    n = d2.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        part = np.argpartition(d2, k - 1)[:k]
        # ties straddling the partition boundary must still resolve to the
        # lowest index, so widen to every candidate at the boundary distance
        bound = d2[part].max()
        cand = np.nonzero(d2 <= bound)[0]
    order = np.lexsort((cand, d2[cand]))[:k]
    chosen = cand[order]
    return chosen, d2[chosen]

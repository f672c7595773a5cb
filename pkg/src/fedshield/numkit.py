"""Dense vector math shared by every other module.

Everything here operates on 1-D float64 numpy arrays ("vectors") and plain
K x K float64 similarity matrices. All functions are pure and deterministic
given their seed arguments, so they are safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

ZERO_NORM_EPS = 1e-12


class ZeroNormError(ValueError):
    """A vector with (near-)zero Euclidean norm where a direction is required.

    Carries ``index`` when raised for a specific row of a stacked input.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DegenerateInputError(ValueError):
    """Structurally unusable input (e.g. rows of mismatched length)."""


class EmptyInputError(ValueError):
    """An operation that needs at least one value received none."""


@dataclass(frozen=True)
class GaussianStats:
    """Mean / population standard deviation summary of a scalar sample."""

    mean: float
    std: float
    count: int


def as_matrix(rows: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Stack equal-length 1-D rows into a float64 (n, d) matrix."""
    if isinstance(rows, np.ndarray) and rows.ndim == 2:
        return np.asarray(rows, dtype=np.float64)
    rows = list(rows)
    if not rows:
        raise EmptyInputError("no rows given")
    lengths = {np.asarray(r).shape for r in rows}
    if len(lengths) != 1 or len(next(iter(lengths))) != 1:
        raise DegenerateInputError(f"rows must be 1-D and equal length, got shapes {sorted(lengths)}")
    return np.asarray(rows, dtype=np.float64)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises ZeroNormError when either vector has norm below 1e-12; callers
    treat such degenerate gradients as anomalous rather than similar.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DegenerateInputError(f"length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ZeroNormError(f"zero-norm vector (norms {na:.3e}, {nb:.3e})")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def pairwise_cosine(rows: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity matrix of the given row vectors.

    The upper triangle (including the diagonal) is computed once and
    mirrored, so the result is exactly symmetric. Entries are clamped to
    [-1, 1]. A zero-norm row raises ZeroNormError carrying its index.
    """
    mat = as_matrix(rows)
    if mat.shape[0] < 2:
        raise DegenerateInputError("need at least 2 rows")
    norms = np.linalg.norm(mat, axis=1)
    bad = np.nonzero(norms < ZERO_NORM_EPS)[0]
    if bad.size:
        raise ZeroNormError(f"zero-norm row at index {int(bad[0])}", index=int(bad[0]))
    unit = mat / norms[:, None]
    gram = np.clip(unit @ unit.T, -1.0, 1.0)
    upper = np.triu(gram)
    return upper + np.triu(gram, 1).T


def gaussian_fit(values: Sequence[float] | np.ndarray) -> GaussianStats:
    """Fit mean and population (1/n) standard deviation to scalar values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInputError("gaussian_fit needs at least one value")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("gaussian_fit requires finite values")
    return GaussianStats(mean=float(arr.mean()), std=float(arr.std(ddof=0)), count=int(arr.size))


def zscore(x: float, g: GaussianStats) -> float:
    """|x - mean| / std, with a sentinel contract for degenerate std.

    When std < 1e-12 the Gaussian is a point mass: values at the mean get
    0.0, everything else gets +inf so that any finite threshold rejects it.
    """
    dev = abs(x - g.mean)
    if g.std < ZERO_NORM_EPS:
        return 0.0 if dev < ZERO_NORM_EPS else math.inf
    return dev / g.std


# ---------------------------------------------------------------------------
# 2-means clustering (Lloyd's algorithm, k-means++ init)
# ---------------------------------------------------------------------------


def _sq_dists(points: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    diff = points - centroid
    return np.einsum("ij,ij->i", diff, diff)


def _kmeanspp_init(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding for k=2: first centroid uniform, second
    proportional to squared distance from the first. Callers guarantee the
    points are not all identical, so the second draw is well defined."""
    n = points.shape[0]
    first = int(rng.integers(n))
    d2 = _sq_dists(points, points[first])
    second = int(rng.choice(n, p=d2 / float(d2.sum())))
    return np.stack([points[first].copy(), points[second].copy()])


def _lloyd_iterations(
    points: np.ndarray, centroids: np.ndarray, max_iters: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (assignments, centroids) after each Lloyd iteration.

    Ties in the assignment step go to cluster 0. An emptied cluster is
    re-seeded with the point farthest from the surviving centroid.
    Iteration stops when assignments repeat or max_iters is reached.
    """
    prev = None
    for _ in range(max_iters):
        d0 = _sq_dists(points, centroids[0])
        d1 = _sq_dists(points, centroids[1])
        assign = (d1 < d0).astype(np.int64)
        for label in (0, 1):
            members = assign == label
            if members.any():
                centroids[label] = points[members].mean(axis=0)
            else:
                other = centroids[1 - label]
                far = int(np.argmax(_sq_dists(points, other)))
                centroids[label] = points[far].copy()
                assign[far] = label
        yield assign.copy(), centroids.copy()
        if prev is not None and np.array_equal(prev, assign):
            return
        prev = assign


def kmeans2(
    points: Sequence[np.ndarray] | np.ndarray,
    max_iters: int = 100,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Two-cluster Lloyd's algorithm with seeded k-means++ initialization.

    Returns (assignments in {0, 1} per point, 2 x d centroid matrix).
    Deterministic for a fixed seed. If all points are identical the result
    degenerates to a single cluster: all-zero assignments and two equal
    centroids. Mismatched row lengths raise DegenerateInputError.
    """
    pts = as_matrix(points)
    if pts.shape[0] < 2:
        raise DegenerateInputError("kmeans2 needs at least 2 points")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not np.any(pts != pts[0]):
        centroid = pts[0].copy()
        return np.zeros(pts.shape[0], dtype=np.int64), np.stack([centroid, centroid])
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(pts, rng)
    assign = np.zeros(pts.shape[0], dtype=np.int64)
    for assign, centroids in _lloyd_iterations(pts, centroids, max_iters):
        pass
    return assign, centroids


def within_cluster_sse(points: np.ndarray, assignments: np.ndarray) -> float:
    """Sum of squared distances of each point to its cluster mean."""
    pts = as_matrix(points)
    sse = 0.0
    for label in np.unique(assignments):
        members = pts[assignments == label]
        sse += float(_sq_dists(members, members.mean(axis=0)).sum())
    return sse

"""Round-level robust aggregators over client gradient updates.

Every aggregator canonicalizes its inputs by ascending client id before any
arithmetic, so permuting the caller's update order can never change the
result, and times its own work (selection + reduction) into the returned
result. Median and trimmed mean share one sort-based per-coordinate kernel;
Krum scores pairwise distances explicitly, which is transparent and fast
enough for desk-scale rounds (K <= 50).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numkit


class EmptyRoundError(ValueError):
    """No (or too few) updates to aggregate."""


class DimMismatchError(ValueError):
    """Updates in one round must share a single gradient dimension."""


class TooFewClientsError(ValueError):
    """Krum needs K >= 2f + 3 participants."""

    def __init__(self, num_clients: int, num_malicious: int):
        super().__init__(
            f"krum needs K >= 2f + 3 clients, got K={num_clients} for f={num_malicious}"
        )
        self.num_clients = num_clients
        self.num_malicious = num_malicious


class OverTrimmedError(ValueError):
    """Trim fraction leaves no coordinates to average."""


@dataclass
class ClientUpdate:
    """One client's contribution to a round: full-model gradient plus its
    local sample count (used for weighted averaging)."""

    client_id: int
    gradient: np.ndarray
    num_samples: int = 1

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=np.float64)
        if self.num_samples < 1:
            raise ValueError(f"client {self.client_id}: num_samples must be >= 1")


@dataclass
class AggregationResult:
    """Aggregate vector plus the round's selected/rejected client id split
    and the wall-clock seconds spent selecting and reducing."""

    aggregate: np.ndarray
    selected_ids: list[int]
    rejected_ids: list[int] = field(default_factory=list)
    wall_time: float = 0.0


def _canonical(updates: list[ClientUpdate], minimum: int = 1) -> list[ClientUpdate]:
    if len(updates) < minimum:
        raise EmptyRoundError(f"need at least {minimum} update(s), got {len(updates)}")
    dims = {u.gradient.shape for u in updates}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimMismatchError(f"updates must share one 1-D gradient shape, got {sorted(dims)}")
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate client ids in round: {sorted(ids)}")
    return sorted(updates, key=lambda u: u.client_id)


def fedavg(updates: list[ClientUpdate]) -> AggregationResult:
    """Sample-count-weighted mean of all updates; nobody is rejected."""
    updates = _canonical(updates)
    start = time.perf_counter()
    weights = np.asarray([u.num_samples for u in updates], dtype=np.float64)
    weights /= weights.sum()
    stack = np.stack([u.gradient for u in updates])
    aggregate = weights @ stack
    return AggregationResult(
        aggregate=aggregate,
        selected_ids=[u.client_id for u in updates],
        wall_time=time.perf_counter() - start,
    )


def krum(updates: list[ClientUpdate], num_malicious: int) -> AggregationResult:
    """Classical single-Krum: return verbatim the update with the smallest
    sum of squared distances to its K - f - 2 nearest peers.

    Ties go to the lowest client id. Raises TooFewClientsError unless
    K >= 2f + 3.
    """
    updates = _canonical(updates)
    k = len(updates)
    if num_malicious < 0:
        raise ValueError("num_malicious must be >= 0")
    if k < 2 * num_malicious + 3:
        raise TooFewClientsError(k, num_malicious)
    start = time.perf_counter()
    grads = [u.gradient for u in updates]
    dist2 = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            diff = grads[i] - grads[j]
            dist2[i, j] = dist2[j, i] = diff @ diff
    np.fill_diagonal(dist2, np.inf)
    closest = np.sort(dist2, axis=1)[:, : k - num_malicious - 2]
    winner = int(np.argmin(closest.sum(axis=1)))
    return AggregationResult(
        aggregate=grads[winner].copy(),
        selected_ids=[updates[winner].client_id],
        rejected_ids=[u.client_id for i, u in enumerate(updates) if i != winner],
        wall_time=time.perf_counter() - start,
    )


def coord_median(updates: list[ClientUpdate]) -> AggregationResult:
    """Unweighted per-coordinate median (mean of the middle two when K is
    even); every client counts as selected."""
    updates = _canonical(updates)
    start = time.perf_counter()
    ordered = np.sort(np.stack([u.gradient for u in updates]), axis=0)
    k = len(updates)
    mid = k // 2
    if k % 2:
        aggregate = ordered[mid].copy()
    else:
        aggregate = 0.5 * (ordered[mid - 1] + ordered[mid])
    return AggregationResult(
        aggregate=aggregate,
        selected_ids=[u.client_id for u in updates],
        wall_time=time.perf_counter() - start,
    )


def trimmed_mean(updates: list[ClientUpdate], trim_fraction: float) -> AggregationResult:
    """Per coordinate, drop the floor(beta * K) smallest and largest values
    and average the rest (unweighted). beta = 0 degrades to the plain mean."""
    updates = _canonical(updates)
    if not 0.0 <= trim_fraction < 0.5:
        raise OverTrimmedError(f"trim_fraction must be in [0, 0.5), got {trim_fraction}")
    k = len(updates)
    drop = int(trim_fraction * k)
    if k - 2 * drop < 1:
        raise OverTrimmedError(f"dropping {drop} per side leaves nothing of K={k}")
    start = time.perf_counter()
    stack = np.stack([u.gradient for u in updates])
    if drop == 0:
        aggregate = stack.mean(axis=0)
    else:
        aggregate = np.sort(stack, axis=0)[drop : k - drop].mean(axis=0)
    return AggregationResult(
        aggregate=aggregate,
        selected_ids=[u.client_id for u in updates],
        wall_time=time.perf_counter() - start,
    )


def flame_lite(updates: list[ClientUpdate], noise_scale: float, seed: int) -> AggregationResult:
    """Simplified cluster-clip-noise defense (a desk-scale stand-in for
    FLAME; documented as FLAME-lite, never as the original).

    Stages: (1) 2-means over rows of the pairwise cosine-distance matrix of
    the full gradients, keeping the larger cluster when it holds at least
    ceil(K/2) members and everything otherwise; (2) clip each kept gradient
    to the median L2 norm of the kept set; (3) average and, when
    noise_scale > 0, add isotropic Gaussian noise with sigma =
    noise_scale * median_norm.
    """
    updates = _canonical(updates, minimum=3)
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    start = time.perf_counter()
    k = len(updates)
    grads = np.stack([u.gradient for u in updates])
    distance_rows = 1.0 - numkit.pairwise_cosine(grads)
    assign, _ = numkit.kmeans2(distance_rows, seed=seed)

    def cluster_rank(label: int) -> tuple[int, float]:
        members = [updates[i].client_id for i in range(k) if assign[i] == label]
        # more members wins; equal sizes go to the cluster holding the lowest id
        return len(members), -min(members) if members else -math.inf

    larger = max((0, 1), key=cluster_rank)
    if cluster_rank(larger)[0] >= math.ceil(k / 2):
        kept = [i for i in range(k) if assign[i] == larger]
    else:
        kept = list(range(k))
    norms = np.linalg.norm(grads[kept], axis=1)
    median_norm = float(np.median(norms))
    scales = np.ones(len(kept))
    positive = norms > 0
    scales[positive] = np.minimum(1.0, median_norm / norms[positive])
    clipped = grads[kept] * scales[:, None]
    aggregate = clipped.mean(axis=0)
    if noise_scale > 0:
        rng = np.random.default_rng(seed + 1)
        aggregate = aggregate + rng.normal(0.0, noise_scale * median_norm, size=aggregate.shape)
    kept_set = set(kept)
    return AggregationResult(
        aggregate=aggregate,
        selected_ids=[updates[i].client_id for i in kept],
        rejected_ids=[u.client_id for i, u in enumerate(updates) if i not in kept_set],
        wall_time=time.perf_counter() - start,
    )

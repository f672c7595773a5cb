"""GShield: benign-profile defense against targeted poisoning.

The defense runs in two phases around a configured number of warm-up
("safe") rounds that the experiment design keeps attack-free:

* Safe phase (round t <= t_safe). Clients' last-layer gradients are turned
  into a pairwise cosine-similarity matrix; 2-means over the matrix rows
  splits the round into two groups and the larger one is taken as benign.
  Each safe round contributes the mean and population standard deviation of
  the benign members' similarity values (the off-diagonal entries of their
  matrix rows). After t_safe rounds those per-round statistics are averaged
  into a single Gaussian baseline (mu, sigma).

* Detection phase (t > t_safe). Each client's similarity score sim_i (the
  mean off-diagonal cosine of its last-layer gradient against the other
  participants) is reduced to the distance d_i = |sim_i - mu| / sigma, and
  clients with d_i <= z_alpha are kept. If nobody passes, the single
  closest client is admitted so training always progresses.

The aggregate over the surviving clients is a sample-weighted mean of their
full-model gradients (the similarity scoring sees only last-layer slices;
the two vector roles are kept as separate arguments to prevent mixups).

A zero-norm last-layer gradient marks its client as maximally dissimilar
(sim_i = -1) and drops it from everyone else's score, so degenerate updates
are pushed toward rejection instead of poisoning the statistics.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import numkit
from .aggregation import AggregationResult, ClientUpdate, EmptyRoundError, fedavg
from .numkit import GaussianStats


class Phase(enum.Enum):
    SAFE = "safe"
    DETECTION = "detection"


@dataclass(frozen=True)
class BenignProfile:
    """Accumulated benign-similarity baseline and its phase.

    ``mu``/``sigma`` are only meaningful in the detection phase; during the
    safe phase the per-round statistics pile up in ``safe_means`` /
    ``safe_stds``. Instances are immutable: updates return a new profile.
    """

    t_safe: int
    z_alpha: float
    phase: Phase = Phase.SAFE
    safe_means: tuple[float, ...] = ()
    safe_stds: tuple[float, ...] = ()
    mu: float | None = None
    sigma: float | None = None

    @staticmethod
    def fresh(t_safe: int, z_alpha: float) -> "BenignProfile":
        """Start a profile. t_safe = 0 skips profiling entirely: the
        detection phase then uses an infinitely wide baseline, i.e. the
        filter admits everyone and GShield degrades to plain FedAvg."""
        if t_safe < 0:
            raise ValueError("t_safe must be >= 0")
        if not z_alpha > 0:
            raise ValueError("z_alpha must be positive")
        if t_safe == 0:
            return BenignProfile(
                t_safe=0, z_alpha=z_alpha, phase=Phase.DETECTION, mu=0.0, sigma=math.inf
            )
        return BenignProfile(t_safe=t_safe, z_alpha=z_alpha)


@dataclass
class SelectionOutcome:
    """One round's benign/rejected split with per-client diagnostics.

    ``per_client_distance`` is populated only in the detection phase,
    ``cluster_sizes`` only in the safe phase.
    """

    benign_ids: list[int]
    rejected_ids: list[int]
    per_client_sim: dict[int, float]
    per_client_distance: dict[int, float] | None = None
    cluster_sizes: tuple[int, int] | None = None


def client_similarity_scores(
    last_layer_grads: list[tuple[int, np.ndarray]],
) -> tuple[np.ndarray, dict[int, float]]:
    """Pairwise cosine matrix of the clients' last-layer gradients plus the
    per-client score sim_i = mean of row i excluding the diagonal.

    Zero-norm clients get matrix entries and sim_i of -1.0 and are excluded
    from other clients' row means. Rows follow the input order.
    """
    if len(last_layer_grads) < 2:
        raise EmptyRoundError("similarity scores need at least 2 clients")
    ids = [cid for cid, _ in last_layer_grads]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate client ids: {sorted(ids)}")
    grads = numkit.as_matrix([g for _, g in last_layer_grads])
    k = grads.shape[0]
    norms = np.linalg.norm(grads, axis=1)
    valid = norms >= numkit.ZERO_NORM_EPS

    matrix = np.full((k, k), -1.0)
    np.fill_diagonal(matrix, 1.0)
    valid_idx = np.nonzero(valid)[0]
    if valid_idx.size >= 2:
        sub = numkit.pairwise_cosine(grads[valid_idx])
        matrix[np.ix_(valid_idx, valid_idx)] = sub
    elif valid_idx.size == 1:
        matrix[valid_idx[0], valid_idx[0]] = 1.0

    sims: dict[int, float] = {}
    for i, cid in enumerate(ids):
        if not valid[i]:
            sims[cid] = -1.0
            continue
        peers = valid.copy()
        peers[i] = False
        # a lone valid client has no peers to compare against; score neutral
        sims[cid] = float(matrix[i, peers].mean()) if peers.any() else 0.0
    return matrix, sims


def _cluster_benign(
    matrix: np.ndarray, client_ids: list[int], sims: dict[int, float], seed: int
) -> tuple[list[int], tuple[int, int]]:
    """2-means over similarity-profile rows; the bigger cluster is benign.

    Tie chain for equal sizes: higher mean member similarity score, then
    the cluster containing the lowest client id.
    """
    assign, _ = numkit.kmeans2(matrix, seed=seed)
    members = {lbl: [i for i in range(len(client_ids)) if assign[i] == lbl] for lbl in (0, 1)}

    def rank(lbl: int) -> tuple[int, float, int]:
        rows = members[lbl]
        if not rows:
            return 0, -math.inf, 0
        mean_sim = float(np.mean([sims[client_ids[i]] for i in rows]))
        lowest = min(client_ids[i] for i in rows)
        return len(rows), mean_sim, -lowest

    winner = max((0, 1), key=rank)
    benign = [client_ids[i] for i in members[winner]]
    return benign, (len(members[0]), len(members[1]))


def _benign_row_entries(matrix: np.ndarray, client_ids: list[int], benign: list[int]) -> np.ndarray:
    """The benign members' similarity values for one round: every
    off-diagonal entry of their rows of the similarity matrix.

    This is the sample the per-round Gaussian statistics are fitted to. It
    deliberately spans the benign clients' similarities to ALL round
    participants (not just to each other), so the learned spread reflects
    how unevenly a trustworthy client can score against a heterogeneous
    round; a profile fitted only to scores inside the tight majority
    cluster rejects ordinary stragglers wholesale once attackers start
    dragging everyone's scores down.
    """
    k = len(client_ids)
    rows = [client_ids.index(cid) for cid in benign]
    mask = ~np.eye(k, dtype=bool)
    return np.concatenate([matrix[i][mask[i]] for i in rows])


def safe_round_select(
    matrix: np.ndarray,
    client_ids: list[int],
    sims: dict[int, float],
    profile: BenignProfile,
    seed: int,
) -> tuple[SelectionOutcome, BenignProfile]:
    """One safe-phase round: cluster, keep the larger group, absorb its
    similarity statistics, and flip to the detection phase once t_safe
    rounds are banked (mu and sigma become the means of the per-round
    values)."""
    if profile.phase is not Phase.SAFE:
        raise ValueError("safe_round_select requires a safe-phase profile")
    benign, cluster_sizes = _cluster_benign(matrix, client_ids, sims, seed)
    stats = numkit.gaussian_fit(_benign_row_entries(matrix, client_ids, benign))
    safe_means = profile.safe_means + (stats.mean,)
    safe_stds = profile.safe_stds + (stats.std,)
    if len(safe_means) >= profile.t_safe:
        updated = replace(
            profile,
            phase=Phase.DETECTION,
            safe_means=safe_means,
            safe_stds=safe_stds,
            mu=float(np.mean(safe_means)),
            sigma=float(np.mean(safe_stds)),
        )
    else:
        updated = replace(profile, safe_means=safe_means, safe_stds=safe_stds)
    outcome = SelectionOutcome(
        benign_ids=sorted(benign),
        rejected_ids=sorted(set(client_ids) - set(benign)),
        per_client_sim=dict(sims),
        cluster_sizes=cluster_sizes,
    )
    return outcome, updated


def detect(sims: dict[int, float], profile: BenignProfile) -> SelectionOutcome:
    """Detection-phase filtering: keep clients whose similarity score lies
    within z_alpha baseline deviations; admit the single closest client when
    the threshold rejects everyone."""
    if profile.phase is not Phase.DETECTION:
        raise ValueError("detect requires a detection-phase profile")
    baseline = GaussianStats(mean=profile.mu, std=profile.sigma, count=max(profile.t_safe, 1))
    distances = {cid: numkit.zscore(sim, baseline) for cid, sim in sims.items()}
    benign = [cid for cid, d in distances.items() if d <= profile.z_alpha]
    if not benign:
        # fall back to the closest client so the round still aggregates
        benign = [min(distances, key=lambda cid: (distances[cid], cid))]
    return SelectionOutcome(
        benign_ids=sorted(benign),
        rejected_ids=sorted(set(sims) - set(benign)),
        per_client_sim=dict(sims),
        per_client_distance=distances,
    )


def gshield_aggregate(
    updates: list[ClientUpdate],
    last_layer_grads: list[tuple[int, np.ndarray]],
    profile: BenignProfile,
    round_t: int,
    seed: int,
) -> tuple[AggregationResult, BenignProfile, SelectionOutcome]:
    """Run one round of the defense and aggregate the survivors.

    Routes to the safe-phase selector while round_t <= t_safe and to the
    detection filter afterwards; the aggregate is the sample-weighted mean
    (FedAvg) of the benign clients' full-model gradients. Returns the
    aggregation result (with the selection + aggregation wall time), the
    updated profile, and the selection outcome diagnostics.
    """
    if not updates:
        raise EmptyRoundError("gshield received an empty round")
    update_ids = {u.client_id for u in updates}
    grad_ids = {cid for cid, _ in last_layer_grads}
    if update_ids != grad_ids:
        raise ValueError(
            f"updates and last-layer gradients disagree: {sorted(update_ids ^ grad_ids)}"
        )
    start = time.perf_counter()
    matrix, sims = client_similarity_scores(last_layer_grads)
    if round_t <= profile.t_safe:
        ids = [cid for cid, _ in last_layer_grads]
        outcome, profile = safe_round_select(matrix, ids, sims, profile, seed)
    else:
        outcome = detect(sims, profile)
    benign_set = set(outcome.benign_ids)
    inner = fedavg([u for u in updates if u.client_id in benign_set])
    result = AggregationResult(
        aggregate=inner.aggregate,
        selected_ids=sorted(benign_set),
        rejected_ids=sorted(update_ids - benign_set),
        wall_time=time.perf_counter() - start,
    )
    return result, profile, outcome

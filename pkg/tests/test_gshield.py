"""GShield selection: similarity scores, safe-phase profiling, detection."""

import math

import numpy as np
import pytest

from fedshield.aggregation import ClientUpdate, EmptyRoundError, fedavg
from fedshield.gshield import (
    BenignProfile,
    Phase,
    client_similarity_scores,
    detect,
    gshield_aggregate,
    safe_round_select,
)


def grads_from(vectors, ids=None):
    ids = ids if ids is not None else list(range(len(vectors)))
    return [(i, np.asarray(v, dtype=np.float64)) for i, v in zip(ids, vectors)]


def cosine_oracle(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def run_safe_round(vectors, profile, ids=None, seed=0):
    grads = grads_from(vectors, ids)
    matrix, sims = client_similarity_scores(grads)
    return safe_round_select(matrix, [cid for cid, _ in grads], sims, profile, seed)


# -- client_similarity_scores -------------------------------------------------


def test_similarity_identical_gradients():
    _, sims = client_similarity_scores(grads_from([[1.0, 1.0]] * 3))
    assert all(s == pytest.approx(1.0) for s in sims.values())


def test_similarity_row_means_with_opposition():
    _, sims = client_similarity_scores(grads_from([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]))
    assert sims[0] == pytest.approx(0.0, abs=1e-12)
    assert sims[1] == pytest.approx(0.0, abs=1e-12)
    assert sims[2] == pytest.approx(-1.0)


def test_similarity_matches_pairwise_oracle():
    rng = np.random.default_rng(1)
    vectors = rng.standard_normal((5, 7))
    _, sims = client_similarity_scores(grads_from(vectors))
    for i in range(5):
        expected = np.mean([cosine_oracle(vectors[i], vectors[j]) for j in range(5) if j != i])
        assert sims[i] == pytest.approx(expected, abs=1e-9)


def test_similarity_zero_norm_client_marked_dissimilar():
    vectors = [[1.0, 0.0], [0.9, 0.1], [0.0, 0.0]]
    matrix, sims = client_similarity_scores(grads_from(vectors))
    assert sims[2] == -1.0
    # excluded from others' row means: clients 0,1 compare only to each other
    assert sims[0] == pytest.approx(cosine_oracle(np.array(vectors[0]), np.array(vectors[1])))
    assert matrix[0, 2] == -1.0 and matrix[2, 0] == -1.0


def test_similarity_requires_two_clients():
    with pytest.raises(EmptyRoundError):
        client_similarity_scores(grads_from([[1.0]]))


# -- safe_round_select ---------------------------------------------------------


def test_safe_round_separates_majority_from_outliers():
    rng = np.random.default_rng(2)
    base = np.array([1.0, 0.2, -0.3, 0.5])
    insiders = [base + 0.02 * rng.standard_normal(4) for _ in range(6)]
    outliers = [-base + 0.02 * rng.standard_normal(4) for _ in range(2)]
    profile = BenignProfile.fresh(t_safe=3, z_alpha=2.0)
    outcome, updated = run_safe_round(insiders + outliers, profile)
    assert outcome.benign_ids == [0, 1, 2, 3, 4, 5]
    assert outcome.rejected_ids == [6, 7]
    assert sorted(outcome.cluster_sizes) == [2, 6]
    assert len(updated.safe_means) == 1 and updated.phase is Phase.SAFE


def test_safe_round_all_identical_all_benign():
    profile = BenignProfile.fresh(t_safe=2, z_alpha=2.0)
    outcome, _ = run_safe_round([[1.0, 2.0]] * 4, profile)
    assert outcome.benign_ids == [0, 1, 2, 3]
    assert outcome.rejected_ids == []


def test_transition_averages_per_round_stats():
    profile = BenignProfile.fresh(t_safe=3, z_alpha=2.0)
    profile = BenignProfile(
        t_safe=3, z_alpha=2.0, phase=Phase.SAFE, safe_means=(0.8, 0.8), safe_stds=(0.05, 0.05)
    )
    outcome, updated = run_safe_round([[1.0, 0.0]] * 3, profile)
    assert updated.phase is Phase.DETECTION
    assert updated.mu == pytest.approx(np.mean(list(profile.safe_means) + [1.0]))
    assert updated.sigma == pytest.approx(np.mean(list(profile.safe_stds) + [0.0]), abs=1e-9)


def test_transition_happens_exactly_at_t_safe():
    rng = np.random.default_rng(3)
    profile = BenignProfile.fresh(t_safe=4, z_alpha=2.0)
    flips = []
    for _ in range(4):
        assert profile.phase is Phase.SAFE
        _, profile = run_safe_round(rng.standard_normal((6, 5)), profile)
        flips.append(profile.phase)
    assert flips == [Phase.SAFE, Phase.SAFE, Phase.SAFE, Phase.DETECTION]
    with pytest.raises(ValueError):
        run_safe_round(rng.standard_normal((6, 5)), profile)  # no fifth safe round


# -- detect ---------------------------------------------------------------------


def _detection_profile(mu=0.8, sigma=0.05, z_alpha=2.0, t_safe=5):
    return BenignProfile(
        t_safe=t_safe,
        z_alpha=z_alpha,
        phase=Phase.DETECTION,
        safe_means=(mu,) * t_safe,
        safe_stds=(sigma,) * t_safe,
        mu=mu,
        sigma=sigma,
    )


def test_detect_threshold_arithmetic():
    profile = _detection_profile()
    outcome = detect({1: 0.75, 2: 0.6}, profile)
    assert outcome.benign_ids == [1] and outcome.rejected_ids == [2]
    assert outcome.per_client_distance[1] == pytest.approx(1.0)
    assert outcome.per_client_distance[2] == pytest.approx(4.0)


def test_detect_examples_from_band():
    outcome = detect({1: 0.79, 2: 0.81, 3: 0.3, 4: 0.2}, _detection_profile())
    assert outcome.benign_ids == [1, 2]
    assert outcome.rejected_ids == [3, 4]


def test_detect_empty_benign_falls_back_to_closest():
    outcome = detect({7: 0.1, 9: 0.2}, _detection_profile())
    assert outcome.benign_ids == [9]  # closest to mu=0.8
    assert outcome.rejected_ids == [7]


def test_detect_monotone_in_z_alpha():
    rng = np.random.default_rng(4)
    sims = {i: float(s) for i, s in enumerate(rng.uniform(-1, 1, 12))}
    previous: set = set()
    for z in (0.5, 1.0, 2.0, 4.0, 8.0, 1e9):
        benign = set(detect(sims, _detection_profile(z_alpha=z)).benign_ids)
        assert previous <= benign
        previous = benign


def test_detect_pointwise_threshold_independence():
    profile = _detection_profile()
    sims = {1: 0.75, 2: 0.5, 3: 0.85, 4: -0.2}
    verdicts = {cid: cid in detect(sims, profile).benign_ids for cid in sims}
    for dropped in list(sims):
        remaining = {cid: s for cid, s in sims.items() if cid != dropped}
        sub = detect(remaining, profile)
        for cid in remaining:
            assert (cid in sub.benign_ids) == verdicts[cid]


def test_detect_requires_detection_phase():
    with pytest.raises(ValueError):
        detect({1: 0.5}, BenignProfile.fresh(t_safe=3, z_alpha=2.0))


# -- gshield_aggregate ------------------------------------------------------------


def make_round(vectors, ids=None, samples=None):
    ids = ids if ids is not None else list(range(len(vectors)))
    samples = samples or [1] * len(vectors)
    updates = [
        ClientUpdate(client_id=i, gradient=np.asarray(v, dtype=np.float64), num_samples=n)
        for i, v, n in zip(ids, vectors, samples)
    ]
    last_layer = [(u.client_id, u.gradient.copy()) for u in updates]
    return updates, last_layer


def test_homogeneous_safe_round_aggregates_everyone():
    updates, last = make_round([[0.5, -1.0]] * 5, samples=[1, 2, 3, 4, 5])
    profile = BenignProfile.fresh(t_safe=5, z_alpha=2.0)
    result, _, outcome = gshield_aggregate(updates, last, profile, round_t=1, seed=0)
    np.testing.assert_array_equal(result.aggregate, fedavg(updates).aggregate)
    assert result.selected_ids == [0, 1, 2, 3, 4]
    assert outcome.cluster_sizes is not None


def test_detection_round_rejects_crafted_outlier():
    rng = np.random.default_rng(5)
    base = np.array([1.0, 0.5, -0.5, 0.8, -0.2])
    profile = BenignProfile.fresh(t_safe=1, z_alpha=2.0)
    honest_vecs = lambda: [base + 0.4 * rng.standard_normal(5) for _ in range(11)]
    updates, last = make_round(honest_vecs())
    _, profile, _ = gshield_aggregate(updates, last, profile, round_t=1, seed=0)
    assert profile.phase is Phase.DETECTION

    vectors = honest_vecs() + [-base]
    updates, last = make_round(vectors)
    result, profile, outcome = gshield_aggregate(updates, last, profile, round_t=2, seed=1)
    assert 11 in result.rejected_ids
    complement = [u for u in updates if u.client_id not in result.rejected_ids]
    np.testing.assert_allclose(result.aggregate, fedavg(complement).aggregate, atol=1e-12)
    # the crafted client's gradient has no influence on the aggregate
    boosted = [
        ClientUpdate(u.client_id, 100.0 * u.gradient if u.client_id == 11 else u.gradient, u.num_samples)
        for u in updates
    ]
    boosted_last = [(cid, 100.0 * g if cid == 11 else g) for cid, g in last]
    rerun, _, _ = gshield_aggregate(boosted, boosted_last, profile, round_t=2, seed=1)
    np.testing.assert_allclose(rerun.aggregate, result.aggregate, atol=1e-12)


def test_infinite_z_alpha_disables_filter_bitwise():
    rng = np.random.default_rng(6)
    profile = _detection_profile(mu=0.3, sigma=0.1, z_alpha=math.inf)
    updates, last = make_round(rng.standard_normal((7, 4)), samples=list(range(1, 8)))
    result, _, _ = gshield_aggregate(updates, last, profile, round_t=9, seed=2)
    assert np.array_equal(result.aggregate, fedavg(updates).aggregate)
    assert result.rejected_ids == []


def test_t_safe_zero_profile_admits_everyone():
    rng = np.random.default_rng(7)
    profile = BenignProfile.fresh(t_safe=0, z_alpha=2.0)
    assert profile.phase is Phase.DETECTION
    updates, last = make_round(rng.standard_normal((4, 3)))
    result, _, _ = gshield_aggregate(updates, last, profile, round_t=1, seed=0)
    assert np.array_equal(result.aggregate, fedavg(updates).aggregate)


def test_selection_outcome_scale_invariant():
    rng = np.random.default_rng(8)
    vectors = rng.standard_normal((8, 5))
    profile = BenignProfile.fresh(t_safe=2, z_alpha=2.0)
    for scale in (1.0, 7.3, 1e-3):
        updates, last = make_round(scale * vectors)
        outcome, _ = run_safe_round(scale * vectors, profile, seed=3)
        reference, _ = run_safe_round(vectors, profile, seed=3)
        assert outcome.benign_ids == reference.benign_ids
        assert outcome.rejected_ids == reference.rejected_ids


def test_aggregate_equals_fedavg_restricted_to_benign():
    rng = np.random.default_rng(9)
    updates, last = make_round(rng.standard_normal((9, 4)), samples=rng.integers(1, 40, 9).tolist())
    profile = BenignProfile.fresh(t_safe=1, z_alpha=2.0)
    result, profile, outcome = gshield_aggregate(updates, last, profile, round_t=1, seed=4)
    benign = [u for u in updates if u.client_id in outcome.benign_ids]
    np.testing.assert_allclose(result.aggregate, fedavg(benign).aggregate, atol=1e-12)


def test_gshield_requires_matching_client_sets():
    updates, last = make_round([[1.0], [2.0]])
    with pytest.raises(ValueError):
        gshield_aggregate(updates, last[:1], BenignProfile.fresh(1, 2.0), 1, seed=0)


def test_gshield_empty_round():
    with pytest.raises(EmptyRoundError):
        gshield_aggregate([], [], BenignProfile.fresh(1, 2.0), 1, seed=0)

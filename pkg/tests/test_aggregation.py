"""Robust aggregators against independent sort/brute-force oracles."""

import numpy as np
import pytest

from fedshield.aggregation import (
    AggregationResult,
    ClientUpdate,
    DimMismatchError,
    EmptyRoundError,
    OverTrimmedError,
    TooFewClientsError,
    coord_median,
    fedavg,
    flame_lite,
    krum,
    trimmed_mean,
)


def updates_from(vectors, samples=None, ids=None):
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    samples = samples or [1] * len(vectors)
    ids = ids if ids is not None else list(range(len(vectors)))
    return [ClientUpdate(client_id=i, gradient=v, num_samples=n) for i, v, n in zip(ids, vectors, samples)]


def random_round(rng, k=None, dim=None):
    k = k or int(rng.integers(2, 21))
    dim = dim or int(rng.integers(1, 51))
    return updates_from(rng.standard_normal((k, dim)) * rng.uniform(0.5, 5))


# -- oracles -------------------------------------------------------------


def median_oracle(grads):
    """Per-coordinate sort with explicit even/odd handling."""
    stack = np.stack(grads)
    out = np.empty(stack.shape[1])
    for j in range(stack.shape[1]):
        column = sorted(stack[:, j].tolist())
        m = len(column)
        out[j] = column[m // 2] if m % 2 else 0.5 * (column[m // 2 - 1] + column[m // 2])
    return out


def trimmed_oracle(grads, beta):
    stack = np.stack(grads)
    k = stack.shape[0]
    drop = int(beta * k)
    out = np.empty(stack.shape[1])
    for j in range(stack.shape[1]):
        column = sorted(stack[:, j].tolist())
        kept = column[drop : k - drop]
        out[j] = sum(kept) / len(kept)
    return out


def krum_oracle(updates, f):
    """Brute-force scores from scratch (no shared code with the library)."""
    k = len(updates)
    scores = []
    for i in range(k):
        dists = sorted(
            float(np.sum((updates[i].gradient - updates[j].gradient) ** 2))
            for j in range(k)
            if j != i
        )
        scores.append(sum(dists[: k - f - 2]))
    best = min(range(k), key=lambda i: (scores[i], updates[i].client_id))
    return updates[best].client_id


# -- fedavg -------------------------------------------------------------


def test_fedavg_equal_weights():
    result = fedavg(updates_from([[2.0], [4.0]]))
    np.testing.assert_allclose(result.aggregate, [3.0])
    assert result.selected_ids == [0, 1] and result.rejected_ids == []


def test_fedavg_sample_weighted():
    result = fedavg(updates_from([[0.0], [4.0]], samples=[1, 3]))
    np.testing.assert_allclose(result.aggregate, [3.0])


def test_fedavg_single_update_identity():
    result = fedavg(updates_from([[1.5, -2.0]]))
    np.testing.assert_allclose(result.aggregate, [1.5, -2.0])


def test_fedavg_linear_in_updates():
    rng = np.random.default_rng(0)
    ups = random_round(rng, k=6, dim=8)
    scaled = [ClientUpdate(u.client_id, 3.0 * u.gradient, u.num_samples) for u in ups]
    np.testing.assert_allclose(fedavg(scaled).aggregate, 3.0 * fedavg(ups).aggregate, atol=1e-12)


def test_fedavg_rejects_empty_and_mismatched():
    with pytest.raises(EmptyRoundError):
        fedavg([])
    with pytest.raises(DimMismatchError):
        fedavg(updates_from([[1.0], [1.0, 2.0]]))


# -- krum ---------------------------------------------------------------


def test_krum_rejects_outlier():
    vectors = [[0.0], [0.1], [-0.1], [0.05], [10.0]]
    result = krum(updates_from(vectors), num_malicious=1)
    assert result.selected_ids[0] != 4
    assert result.aggregate[0] != 10.0
    assert sorted(result.selected_ids + result.rejected_ids) == [0, 1, 2, 3, 4]


def test_krum_tie_goes_to_lowest_id():
    result = krum(updates_from([[1.0]] * 5), num_malicious=1)
    assert result.selected_ids == [0]


def test_krum_too_few_clients():
    with pytest.raises(TooFewClientsError):
        krum(updates_from([[1.0]] * 4), num_malicious=1)


def test_krum_matches_brute_force_on_random_rounds():
    rng = np.random.default_rng(4)
    for trial in range(50):
        k = int(rng.integers(5, 9))
        f = int(rng.integers(0, (k - 3) // 2 + 1))
        ups = updates_from(rng.standard_normal((k, int(rng.integers(2, 10)))))
        assert krum(ups, f).selected_ids == [krum_oracle(ups, f)]


def test_krum_returns_winner_verbatim():
    rng = np.random.default_rng(5)
    ups = updates_from(rng.standard_normal((6, 4)))
    result = krum(ups, num_malicious=1)
    winner = next(u for u in ups if u.client_id == result.selected_ids[0])
    assert np.array_equal(result.aggregate, winner.gradient)


# -- coord_median ----------------------------------------------------------


def test_median_odd_and_even():
    np.testing.assert_allclose(coord_median(updates_from([[1.0], [2.0], [100.0]])).aggregate, [2.0])
    np.testing.assert_allclose(coord_median(updates_from([[1.0], [3.0]])).aggregate, [2.0])


def test_median_matches_sort_oracle_exactly():
    rng = np.random.default_rng(6)
    for _ in range(100):
        ups = random_round(rng)
        expected = median_oracle([u.gradient for u in ups])
        assert np.abs(coord_median(ups).aggregate - expected).max() <= 1e-12


# -- trimmed_mean -----------------------------------------------------------


def test_trimmed_mean_drops_extremes():
    ups = updates_from([[1.0], [2.0], [3.0], [4.0], [100.0]])
    np.testing.assert_allclose(trimmed_mean(ups, 0.2).aggregate, [3.0])


def test_trimmed_mean_beta_zero_is_plain_mean():
    rng = np.random.default_rng(7)
    ups = random_round(rng, k=7, dim=5)
    stack = np.stack([u.gradient for u in ups])
    assert np.array_equal(trimmed_mean(ups, 0.0).aggregate, stack.mean(axis=0))


def test_trimmed_mean_matches_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        ups = random_round(rng, k=int(rng.integers(3, 15)))
        beta = float(rng.uniform(0, 0.45))
        if len(ups) - 2 * int(beta * len(ups)) < 1:
            continue
        expected = trimmed_oracle([u.gradient for u in ups], beta)
        assert np.abs(trimmed_mean(ups, beta).aggregate - expected).max() <= 1e-12


def test_trimmed_mean_over_trimmed():
    # beta < 0.5 can never empty the kept band (floor(beta*K) < K/2), so the
    # only over-trim path is the range check itself
    with pytest.raises(OverTrimmedError):
        trimmed_mean(updates_from([[1.0], [2.0], [3.0]]), 0.5)
    with pytest.raises(OverTrimmedError):
        trimmed_mean(updates_from([[1.0], [2.0], [3.0]]), -0.1)


# -- flame_lite --------------------------------------------------------------


def test_flame_identical_updates_pass_through():
    ups = updates_from([[1.0, 2.0]] * 4)
    result = flame_lite(ups, noise_scale=0.0, seed=0)
    np.testing.assert_allclose(result.aggregate, [1.0, 2.0])
    assert result.rejected_ids == []


def test_flame_clips_oversized_gradient():
    base = np.array([1.0, 0.0])
    ups = updates_from([base, base, base, 100.0 * base])
    result = flame_lite(ups, noise_scale=0.0, seed=1)
    # hand oracle: median kept norm is 1, the outlier is clipped down to it
    kept = result.selected_ids
    clipped = []
    for u in updates_from([base, base, base, 100.0 * base]):
        if u.client_id in kept:
            norm = np.linalg.norm(u.gradient)
            clipped.append(u.gradient * min(1.0, 1.0 / norm))
    np.testing.assert_allclose(result.aggregate, np.mean(clipped, axis=0), atol=1e-12)
    assert np.linalg.norm(result.aggregate) <= 1.0 + 1e-9


def test_flame_rejects_minority_clique():
    rng = np.random.default_rng(9)
    major = [np.array([1.0, 0.0, 0.0]) + 0.01 * rng.standard_normal(3) for _ in range(7)]
    minor = [np.array([-1.0, 0.0, 0.0]) + 0.01 * rng.standard_normal(3) for _ in range(3)]
    result = flame_lite(updates_from(major + minor), noise_scale=0.0, seed=2)
    assert sorted(result.rejected_ids) == [7, 8, 9]


def test_flame_noise_disabled_at_zero_scale():
    rng = np.random.default_rng(10)
    ups = random_round(rng, k=5, dim=4)
    a = flame_lite(ups, noise_scale=0.0, seed=3)
    b = flame_lite(ups, noise_scale=0.0, seed=3)
    assert np.array_equal(a.aggregate, b.aggregate)


def test_flame_requires_three_updates():
    with pytest.raises(EmptyRoundError):
        flame_lite(updates_from([[1.0], [2.0]]), 0.0, seed=0)


# -- shared contracts -----------------------------------------------------------


@pytest.mark.parametrize(
    "aggregate",
    [
        fedavg,
        lambda u: krum(u, 1),
        coord_median,
        lambda u: trimmed_mean(u, 0.2),
        lambda u: flame_lite(u, 0.0, seed=5),
    ],
    ids=["fedavg", "krum", "median", "tmean", "flame"],
)
def test_permutation_invariance_bitwise(aggregate):
    rng = np.random.default_rng(11)
    ups = random_round(rng, k=8, dim=6)
    base = aggregate(list(ups))
    for trial in range(5):
        shuffled = list(ups)
        rng.shuffle(shuffled)
        permuted = aggregate(shuffled)
        assert np.array_equal(permuted.aggregate, base.aggregate)
        assert permuted.selected_ids == base.selected_ids
        assert permuted.rejected_ids == base.rejected_ids


@pytest.mark.parametrize(
    "aggregate",
    [
        fedavg,
        lambda u: krum(u, 1),
        coord_median,
        lambda u: trimmed_mean(u, 0.2),
        lambda u: flame_lite(u, 0.0, seed=5),
    ],
    ids=["fedavg", "krum", "median", "tmean", "flame"],
)
def test_result_partitions_round_ids(aggregate):
    rng = np.random.default_rng(12)
    ids = [3, 11, 7, 20, 5, 8, 13]
    ups = updates_from(rng.standard_normal((7, 4)), ids=ids)
    result = aggregate(ups)
    assert sorted(result.selected_ids + result.rejected_ids) == sorted(ids)
    assert not (set(result.selected_ids) & set(result.rejected_ids))
    assert np.all(np.isfinite(result.aggregate))
    assert result.wall_time >= 0.0


def test_duplicate_client_ids_rejected():
    with pytest.raises(ValueError):
        fedavg(updates_from([[1.0], [2.0]], ids=[4, 4]))

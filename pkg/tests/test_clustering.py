import itertools

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from mrdmix.clustering import (ImputedPanel, binder_loss, binder_partition,
                               cluster_summary, kmeans, pearson_by_subtype,
                               select_dataset, similarity_matrix,
                               wss_profile)
from tests.conftest import make_record


def _blobs(rng, centers, n_per, spread=0.3):
    pts = np.concatenate([c + spread * rng.standard_normal((n_per, len(c)))
                          for c in centers])
    labels = np.repeat(np.arange(1, len(centers) + 1), n_per)
    return pts, labels


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def test_kmeans_exact_recovery_separated_blobs(rng):
    centers = [np.array([0.0, 0.0]), np.array([10.0, 0.0]),
               np.array([0.0, 10.0])]
    pts, truth = _blobs(rng, centers, 40)
    labels, wss = kmeans(pts, 3, rng_or_seed=0)
    from sklearn.metrics import adjusted_rand_score
    assert adjusted_rand_score(truth, labels) == 1.0
    assert labels.min() == 1 and labels.max() == 3


def test_kmeans_wss_matches_sklearn(rng):
    pts = rng.normal(size=(120, 4))
    _, wss = kmeans(pts, 3, rng_or_seed=0, restarts=25)
    from sklearn.cluster import KMeans
    sk = KMeans(n_clusters=3, n_init=25, random_state=0).fit(pts)
    # both optimize the same objective; ours must land within 1%
    assert wss <= sk.inertia_ * 1.01


def test_kmeans_wss_definition(rng):
    pts = rng.normal(size=(30, 2))
    labels, wss = kmeans(pts, 4, rng_or_seed=1)
    direct = 0.0
    for j in range(1, 5):
        rows = pts[labels == j]
        if rows.size:
            direct += ((rows - rows.mean(axis=0)) ** 2).sum()
    np.testing.assert_allclose(wss, direct, rtol=1e-10)


def test_kmeans_k1_and_determinism(rng):
    pts = rng.normal(size=(25, 3))
    labels, wss = kmeans(pts, 1, rng_or_seed=5)
    assert np.all(labels == 1)
    np.testing.assert_allclose(wss, ((pts - pts.mean(axis=0)) ** 2).sum(),
                               rtol=1e-12)
    again = kmeans(pts, 3, rng_or_seed=5)
    first = kmeans(pts, 3, rng_or_seed=5)
    np.testing.assert_array_equal(first[0], again[0])
    assert first[1] == again[1]


def test_wss_profile_shape_and_average(rng):
    mats = rng.normal(size=(3, 40, 5))
    panel = ImputedPanel(mats, tags=["a", "b", "c"])
    prof = wss_profile(panel, k_values=range(1, 5), restarts=8, seed=0)
    assert list(prof.index) == ["a", "b", "c", "average"]
    assert list(prof.columns) == [1, 2, 3, 4]
    np.testing.assert_allclose(prof.loc["average"],
                               prof.iloc[:3].mean(axis=0), rtol=1e-12)
    # more clusters never increase the within-cluster sum
    assert np.all(np.diff(prof.values, axis=1) <= 1e-9)


def test_select_dataset_planted_minimizer(rng):
    base = rng.normal(size=(60, 5))
    tight = np.concatenate([np.zeros((20, 5)), np.full((20, 5), 8.0),
                            np.full((20, 5), -8.0)])
    mats = np.stack([base + 5.0, tight, base - 2.0])
    panel = ImputedPanel(mats, tags=["m0", "m1", "m2"])
    assert select_dataset(panel, k=3, restarts=10, seed=0) == 1


# ---------------------------------------------------------------------------
# similarity + Binder
# ---------------------------------------------------------------------------

def test_similarity_matrix_properties(rng):
    draws = rng.integers(1, 4, size=(50, 12))
    sim = similarity_matrix(draws)
    assert sim.shape == (12, 12)
    np.testing.assert_allclose(sim, sim.T, atol=1e-7)
    np.testing.assert_allclose(np.diag(sim), 1.0, atol=1e-7)
    assert sim.min() >= 0.0 and sim.max() <= 1.0
    # hand value for one pair
    expected = np.mean(draws[:, 0] == draws[:, 1])
    np.testing.assert_allclose(sim[0, 1], expected, atol=1e-7)


def test_similarity_matrix_label_invariance(rng):
    draws = rng.integers(1, 4, size=(30, 10))
    perm = np.array([0, 3, 1, 2])  # relabel 1->1, 2->4, 3->2 ... per draw
    relabeled = draws.copy()
    for s in range(draws.shape[0]):
        p = rng.permutation(3) + 1
        relabeled[s] = p[draws[s] - 1]
    np.testing.assert_allclose(similarity_matrix(draws),
                               similarity_matrix(relabeled), atol=1e-7)


def test_binder_loss_hand_case():
    sim = np.array([[1.0, 0.9, 0.1],
                    [0.9, 1.0, 0.2],
                    [0.1, 0.2, 1.0]])
    # clustering {1,2}{3}: pairs (1,2) together |1-0.9|, (1,3) apart |0-0.1|,
    # (2,3) apart |0-0.2|
    labels = np.array([1, 1, 2])
    np.testing.assert_allclose(binder_loss(labels, sim),
                               0.1 + 0.1 + 0.2, atol=1e-12)
    # all singletons: loss = sum of similarities over pairs
    np.testing.assert_allclose(binder_loss(np.array([1, 2, 3]), sim),
                               0.9 + 0.1 + 0.2, atol=1e-12)


def _all_partitions(n):
    """Restricted-growth enumeration of all set partitions of n items."""
    def rec(prefix, maxlab):
        if len(prefix) == n:
            yield np.array(prefix)
            return
        for lab in range(1, maxlab + 2):
            yield from rec(prefix + [lab], max(maxlab, lab))
    yield from rec([1], 1)


def test_binder_partition_exhaustive_small(rng):
    for trial in range(10):
        raw = rng.random((6, 6))
        sim = (raw + raw.T) / 2
        np.fill_diagonal(sim, 1.0)
        best = min(binder_loss(lab, sim) for lab in _all_partitions(6))
        got = binder_partition(sim, max_k=6, n_orders=32, seed=trial)
        np.testing.assert_allclose(binder_loss(got, sim), best, atol=1e-9)


def test_binder_partition_respects_candidates(rng):
    # a candidate draw that is itself optimal must never be beaten
    draws = np.tile(np.array([1, 1, 2, 2, 3, 3]), (40, 1))
    sim = similarity_matrix(draws)
    got = binder_partition(sim, candidates=draws, n_orders=4, seed=0)
    assert binder_loss(got, sim) <= binder_loss(draws[0], sim) + 1e-9
    # perfect co-clustering: result must reproduce the blocks
    from sklearn.metrics import adjusted_rand_score
    assert adjusted_rand_score(draws[0], got) == 1.0


def test_binder_partition_labels_compact(rng):
    raw = rng.random((9, 9))
    sim = (raw + raw.T) / 2
    np.fill_diagonal(sim, 1.0)
    got = binder_partition(sim, max_k=5, n_orders=16, seed=3)
    labs = np.unique(got)
    np.testing.assert_array_equal(labs, np.arange(1, labs.size + 1))
    assert got.shape == (9,)


# ---------------------------------------------------------------------------
# cluster summaries + correlations
# ---------------------------------------------------------------------------

def test_cluster_summary_values():
    part = np.array([1, 1, 2, 2, 2])
    lc50 = np.array([[0.0, 1, 1, 1, 1],
                     [2.0, 1, 1, 1, 1],
                     [4.0, 2, 2, 2, 2],
                     [6.0, 2, 2, 2, 2],
                     [8.0, 2, 2, 2, 2]])
    subtypes = ["A", "B", "A", "A", "B"]
    summary = cluster_summary(part, lc50, subtypes)
    np.testing.assert_array_equal(summary.sizes, [2, 3])
    np.testing.assert_allclose(summary.lc50_means.loc[1, "asparaginase"],
                               1.0)
    np.testing.assert_allclose(summary.lc50_means.loc[2, "asparaginase"],
                               6.0)
    np.testing.assert_allclose(summary.composition_pct.loc[1, "A"], 50.0)
    np.testing.assert_allclose(summary.composition_pct.loc[2, "A"],
                               200.0 / 3.0)
    # overall first-drug quartiles of [0, 2, 4, 6, 8] (type-7)
    q = summary.lc50_quartiles
    np.testing.assert_allclose(
        q.loc["asparaginase", ["q25", "q50", "q75"]], [2.0, 4.0, 6.0])


def test_pearson_by_subtype_oracle(rng):
    recs = []
    z1 = []
    for i in range(12):
        lc = rng.normal(size=5)
        mrd1 = 10 ** rng.uniform(-1.5, 1.0)
        recs.append(make_record(i, mrd1=mrd1, mrd2=0.5, subtype="T-ALL",
                                lc50=tuple(lc)))
        z1.append(np.log10(mrd1))
    frame = pearson_by_subtype(recs, min_pairs=3)
    row = frame[(frame.time == "day15") & (frame.drug == "asparaginase")
                & (frame.subtype == "T-ALL")].iloc[0]
    lc0 = np.array([r.lc50[0] for r in recs])
    expected, _ = stats.pearsonr(np.array(z1), lc0)
    np.testing.assert_allclose(row.r, expected, rtol=1e-10)
    assert row.n == 12 and row.note == ""


def test_pearson_by_subtype_insufficient_and_censored():
    recs = [make_record(0, mrd1=0.5, subtype="A"),
            make_record(1, mrd1=None, subtype="A"),
            make_record(2, mrd1=0.1, subtype="A"),
            make_record(3, mrd1=0.2, subtype="B")]
    frame = pearson_by_subtype(recs, min_pairs=3)
    row_a = frame[(frame.time == "day15") & (frame.drug == "asparaginase")
                  & (frame.subtype == "A")].iloc[0]
    # censored record drops out: only 2 usable pairs
    assert row_a.n == 2 and row_a.note == "insufficient-pairs"
    assert np.isnan(row_a.r)

    # censored_at_limit keeps it by substituting the detection limit
    frame2 = pearson_by_subtype(recs, min_pairs=3, censored_at_limit=True)
    row_a2 = frame2[(frame2.time == "day15")
                    & (frame2.drug == "asparaginase")
                    & (frame2.subtype == "A")].iloc[0]
    assert row_a2.n == 3 and np.isfinite(row_a2.r)


def test_pearson_zero_variance_note():
    recs = [make_record(i, mrd1=0.5, subtype="A",
                        lc50=(1.0, 0.1 * i, 0.2, 0.3, 0.4))
            for i in range(5)]
    frame = pearson_by_subtype(recs, min_pairs=3)
    row = frame[(frame.time == "day15") & (frame.drug == "asparaginase")
                & (frame.subtype == "A")].iloc[0]
    assert row.note == "zero-variance"
    assert np.isnan(row.r)

"""Pre-analysis clustering, posterior similarity, and Binder partitions.

The k-means code is self-contained (k-means++ seeding, Lloyd updates,
farthest-point repair for empty clusters) so the elbow pre-analysis
and the chain initialization are reproducible from a seed without any
external dependency.  Partition labels are 1-based everywhere, in line
with the mixture allocations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import DRUGS, Z_LOW


@dataclass
class ImputedPanel:
    """M completed LC50 datasets over the same N patients.

    ``matrices`` has shape (M, N, d); ``tags`` identifies each dataset
    (for example the source file name).
    """

    matrices: np.ndarray
    tags: list[str]

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[0] < 1:
            raise ValueError("panel must be (M, N, d) with M >= 1")
        if len(self.tags) != self.matrices.shape[0]:
            raise ValueError("one tag per dataset required")
        if not np.all(np.isfinite(self.matrices)):
            raise ValueError("panel datasets must be complete and finite")

    @property
    def m(self) -> int:
        return self.matrices.shape[0]


def _as_rng(rng_or_seed):
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)


def _kmeanspp(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass on duplicated points: seed uniformly
            centers[j] = points[rng.integers(n)]
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
        idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points, centers, max_iter):
    n, k = points.shape[0], centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for j in range(k):
            if not np.any(new_labels == j):
                # re-seed an empty cluster at the point farthest from
                # its current center, then reassign
                far = int(d2[np.arange(n), new_labels].argmax())
                centers[j] = points[far]
                d2[:, j] = ((points - centers[j]) ** 2).sum(axis=1)
                new_labels = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    wss = 0.0
    for j in range(k):
        rows = points[labels == j]
        wss += float(((rows - rows.mean(axis=0)) ** 2).sum())
    return labels, wss


def kmeans(points, k, rng_or_seed=0, restarts=25, max_iter=200):
    """Best-of-``restarts`` k-means; returns 1-based labels and WSS.

    WSS is the within-cluster sum of squared Euclidean distances to
    the cluster means; for k = 1 it equals the total sum of squares.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < k:
        raise ValueError("need a 2-d matrix with at least k rows")
    rng = _as_rng(rng_or_seed)
    best = None
    for _ in range(restarts):
        centers = _kmeanspp(points, k, rng)
        labels, wss = _lloyd(points, centers, max_iter)
        if best is None or wss < best[1]:
            best = (labels, wss)
    return best[0] + 1, best[1]


def wss_profile(panel, k_values=range(1, 11), restarts=25, seed=0):
    """WSS-versus-k table for every dataset in the panel.

    Returns a DataFrame with one row per dataset (indexed by tag) plus
    a final ``"average"`` row holding the column means over datasets;
    columns are the k values.  With a single dataset the average row
    equals that dataset's row.
    """
    k_values = list(k_values)
    children = np.random.SeedSequence(seed).spawn(panel.m)
    rows = []
    for mi in range(panel.m):
        rng = np.random.default_rng(children[mi])
        rows.append([kmeans(panel.matrices[mi], k, rng, restarts=restarts)[1]
                     for k in k_values])
    frame = pd.DataFrame(rows, index=list(panel.tags), columns=k_values)
    frame.loc["average"] = frame.mean(axis=0)
    return frame


def select_dataset(panel, k=3, restarts=25, seed=0, profile=None):
    """Index of the dataset with the lowest WSS at the given k.

    Ties resolve to the lowest index.  Pass a precomputed profile to
    avoid re-running k-means.
    """
    if profile is None:
        profile = wss_profile(panel, k_values=[k], restarts=restarts,
                              seed=seed)
    col = profile[k].to_numpy()[:-1]  # drop the average row
    return int(np.argmin(col))


# ---------------------------------------------------------------------------
# Posterior similarity and Binder-loss partitioning
# ---------------------------------------------------------------------------

def similarity_matrix(draws):
    """Pairwise posterior co-clustering frequencies.

    ``draws`` is (S, N) of integer labels; entry (i, j) of the result
    is the fraction of draws in which i and j share a label.  The
    result is symmetric with unit diagonal and is invariant to any
    per-draw relabeling of the clusters.
    """
    draws = np.asarray(draws)
    if draws.ndim != 2:
        raise ValueError("draws must be (S, N)")
    s, n = draws.shape
    sim = np.zeros((n, n))
    for lab in np.unique(draws):
        # float32 keeps the count accumulation exact (counts < 2^24)
        a = (draws == lab).astype(np.float32)
        sim += (a.T @ a).astype(np.float64)
    sim /= s
    np.fill_diagonal(sim, 1.0)
    return sim


def binder_loss(labels, sim):
    """Binder loss sum_{i<j} |1[c_i = c_j] - sim_ij| of a partition."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    cost = np.where(same, 1.0 - sim, sim)
    iu = np.triu_indices(labels.size, k=1)
    return float(cost[iu].sum())


def _greedy_binder(sim_penalty, order, max_k):
    """Sequential allocation along ``order``; returns 0-based labels.

    ``sim_penalty`` is E = 1 - 2*sim: joining cluster C changes the
    loss by sum_{j in C} E_ij, and opening a new cluster costs 0.
    """
    n = order.size
    labels = np.full(n, -1, dtype=int)
    labels[order[0]] = 0
    n_clusters = 1
    for t in range(1, n):
        i = order[t]
        placed = order[:t]
        costs = np.bincount(labels[placed], weights=sim_penalty[i, placed],
                            minlength=n_clusters)
        best = int(np.argmin(costs))
        if costs[best] < 0.0 or (max_k is not None and n_clusters >= max_k):
            labels[i] = best
        else:
            labels[i] = n_clusters
            n_clusters += 1
    return labels


def _polish_binder(labels, sim_penalty, max_k, max_sweeps=50):
    """Single-item reassignment until no move strictly improves."""
    labels = _compact_labels(labels)
    n = labels.size
    for _ in range(max_sweeps):
        moved = False
        for i in range(n):
            current = labels[i]
            others = np.delete(np.arange(n), i)
            olab = labels[others]
            n_clusters = int(labels.max()) + 1
            costs = np.bincount(olab, weights=sim_penalty[i, others],
                                minlength=n_clusters)
            best = int(np.argmin(costs))
            best_cost = costs[best]
            # a fresh singleton costs 0; moving a current singleton to
            # a fresh singleton would be a no-op
            is_singleton = not np.any(olab == current)
            if (max_k is None or n_clusters < max_k) and not is_singleton \
                    and best_cost > 0.0:
                best, best_cost = n_clusters, 0.0
            if best != current and best_cost < costs[current] - 1e-12:
                labels[i] = best
                labels = _compact_labels(labels)
                moved = True
        if not moved:
            break
    return labels


def _compact_labels(labels):
    """Renumber labels to 0..K-1 in order of first appearance."""
    out = np.empty_like(labels)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def _candidate_losses(sim, draws):
    """Binder loss of each draw partition.

    Uses loss = sum_{i<j} sim + (1' B^T E B 1 + n) / 2 with E = 1-2*sim
    and B the one-hot label matrix; E's diagonal is -1 because sim has
    unit diagonal, which the +n corrects for.
    """
    draws = np.asarray(draws)
    s, n = draws.shape
    e = 1.0 - 2.0 * sim
    iu = np.triu_indices(n, k=1)
    base = float(sim[iu].sum())
    losses = np.empty(s)
    for si in range(s):
        labs, inv = np.unique(draws[si], return_inverse=True)
        b = np.zeros((n, labs.size))
        b[np.arange(n), inv] = 1.0
        q = float(((e @ b) * b).sum())
        losses[si] = base + 0.5 * (q + n)
    return losses


def binder_partition(sim, max_k=None, candidates=None, n_orders=64, seed=0):
    """Partition minimizing the Binder loss against a similarity matrix.

    Runs greedy sequential allocation over ``n_orders`` random item
    orders, optionally scores every candidate draw partition, then
    polishes the best found partition with single-item reassignment.
    The returned labels are 1-based and contiguous; the result's loss
    never exceeds the loss of any candidate draw.
    """
    sim = np.asarray(sim, dtype=float)
    n = sim.shape[0]
    if sim.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    rng = _as_rng(seed)
    e = 1.0 - 2.0 * sim

    best_labels = None
    best_loss = np.inf
    for _ in range(n_orders):
        order = rng.permutation(n)
        labels = _greedy_binder(e, order, max_k)
        loss = binder_loss(labels, sim)
        if loss < best_loss:
            best_labels, best_loss = labels, loss

    cand_best = np.inf
    if candidates is not None and len(candidates):
        losses = _candidate_losses(sim, candidates)
        ci = int(np.argmin(losses))
        cand_best = float(losses[ci])
        if cand_best < best_loss:
            best_labels = _compact_labels(np.asarray(candidates[ci]))
            best_loss = cand_best

    best_labels = _polish_binder(best_labels, e, max_k)
    final_loss = binder_loss(best_labels, sim)
    # polishing only ever lowers the loss, so the draw bound holds
    assert final_loss <= best_loss + 1e-9
    assert final_loss <= cand_best + 1e-9
    return _compact_labels(best_labels) + 1


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

@dataclass
class ClusterSummary:
    """Per-cluster report tables in original (unstandardized) units."""

    sizes: pd.Series
    lc50_means: pd.DataFrame
    composition_pct: pd.DataFrame
    lc50_quartiles: pd.DataFrame


def cluster_summary(partition, lc50, subtypes, drugs=DRUGS):
    """Summaries of a hard partition: sizes, mean log10 LC50 per drug,
    subtype composition percentages, and overall per-drug quartiles."""
    partition = np.asarray(partition, dtype=int)
    lc50 = np.asarray(lc50, dtype=float)
    subtypes = list(subtypes)
    clusters = sorted(np.unique(partition))

    sizes = pd.Series({c: int((partition == c).sum()) for c in clusters},
                      name="size")
    means = pd.DataFrame(
        [lc50[partition == c].mean(axis=0) for c in clusters],
        index=clusters, columns=list(drugs))

    sub_levels = sorted(set(subtypes))
    comp = pd.DataFrame(0.0, index=clusters, columns=sub_levels)
    for c in clusters:
        rows = [s for s, lab in zip(subtypes, partition) if lab == c]
        for s in rows:
            comp.loc[c, s] += 1
        comp.loc[c] *= 100.0 / max(len(rows), 1)

    quart = pd.DataFrame(
        np.quantile(lc50, [0.25, 0.5, 0.75], axis=0).T,
        index=list(drugs), columns=["q25", "q50", "q75"])
    return ClusterSummary(sizes=sizes, lc50_means=means,
                          composition_pct=comp, lc50_quartiles=quart)


def pearson_by_subtype(records, lc50=None, panel=None, min_pairs=3,
                       censored_at_limit=False, drugs=DRUGS):
    """Pearson correlation of log10 LC50 with log10 MRD per subtype.

    One row per (time point, drug, subtype).  By default only
    uncensored MRD values enter; with ``censored_at_limit`` censored
    values are substituted at the detection limit.  Cells with fewer
    than ``min_pairs`` usable pairs, or zero variance on either side,
    are reported with r = NaN and a reason code.  When ``panel`` is
    given the correlation is the average over the panel's datasets.
    """
    records = list(records)
    if lc50 is None:
        lc50 = np.array([r.lc50 for r in records], dtype=float)
    mats = panel.matrices if panel is not None else lc50[None, ...]

    sub = np.array([r.subtype for r in records])
    out = []
    for t, (zs, ds) in (
            ("day15", ([r.z1 for r in records],
                       [r.delta1 for r in records])),
            ("day42", ([r.z2 for r in records],
                       [r.delta2 for r in records]))):
        z = np.array([Z_LOW if v is None else v for v in zs])
        delta = np.array(ds, dtype=int)
        usable = np.ones_like(delta, dtype=bool) if censored_at_limit \
            else delta == 1
        for level in sorted(set(sub)):
            mask = usable & (sub == level)
            n = int(mask.sum())
            for di, drug in enumerate(drugs):
                if n < min_pairs:
                    out.append((t, drug, level, n, np.nan,
                                "insufficient-pairs"))
                    continue
                rs = []
                note = ""
                for m in range(mats.shape[0]):
                    a = z[mask]
                    b = mats[m][mask, di]
                    if np.std(a) == 0.0 or np.std(b) == 0.0:
                        note = "zero-variance"
                        break
                    rs.append(float(np.corrcoef(a, b)[0, 1]))
                if note:
                    out.append((t, drug, level, n, np.nan, note))
                else:
                    out.append((t, drug, level, n, float(np.mean(rs)), ""))
    return pd.DataFrame(out, columns=["time", "drug", "subtype", "n", "r",
                                      "note"])

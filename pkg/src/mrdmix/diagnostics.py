"""Convergence diagnostics and posterior summaries.

ESS uses Geyer's initial monotone positive sequence on paired
autocovariances; split-R-hat is the potential scale reduction factor
computed after splitting every chain in half.  Summaries use the
default (linear-interpolation) quantile definition throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd


def _autocov(x):
    """Biased autocovariances gamma_0..gamma_{n-1} via FFT."""
    n = x.size
    xd = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xd, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real
    return acov / n


def ess(series):
    """Effective sample size of one scalar chain, or None.

    Sums adjacent-pair autocovariances Gamma_m = gamma_{2m} +
    gamma_{2m+1} while they remain positive, enforcing monotone decay,
    and returns n * gamma_0 / (-gamma_0 + 2 * sum Gamma).  Returns
    None for series that are too short or have zero variance.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 4 or np.var(x) == 0.0:
        return None
    acov = _autocov(x)
    pair_sums = []
    prev = np.inf
    for m in range(n // 2):
        g = acov[2 * m] + acov[2 * m + 1] if 2 * m + 1 < n else acov[2 * m]
        if g <= 0.0:
            break
        g = min(g, prev)  # initial monotone sequence
        pair_sums.append(g)
        prev = g
    var_est = -acov[0] + 2.0 * float(np.sum(pair_sums))
    if var_est <= 0.0:
        return float(n)
    return float(min(n * acov[0] / var_est, n))


def _rhat_groups(groups):
    """PSRF over a (m, n) array of m groups of length n."""
    m, n = groups.shape
    if m < 2 or n < 2:
        return None
    means = groups.mean(axis=1)
    w = groups.var(axis=1, ddof=1).mean()
    if w == 0.0:
        return None
    b_over_n = means.var(ddof=1)
    v = (n - 1) / n * w + b_over_n
    return float(np.sqrt(v / w))


def split_rhat(chains):
    """Split-half potential scale reduction factor.

    ``chains`` is a (m, n) array or a list of equal-length 1-d arrays;
    each chain is split into halves and the classic two-group PSRF is
    computed over all 2m halves.  Returns None when undefined (fewer
    than 4 draws per chain, or zero within-group variance).
    """
    arr = np.atleast_2d(np.asarray(chains, dtype=float))
    n = arr.shape[1]
    if n < 4:
        return None
    half = n // 2
    groups = np.concatenate([arr[:, :half], arr[:, n - half:]], axis=0)
    return _rhat_groups(groups)


@dataclass
class ParamSummary:
    """Posterior summary of one scalar parameter."""

    name: str
    mean: float
    sd: float
    median: float
    q2_5: float
    q25: float
    q75: float
    q97_5: float
    ess: float | None
    rhat: float | None
    excludes_zero: bool
    note: str = ""


def summarize(store, params=None, include_latent=False):
    """Summaries for every stored scalar parameter.

    Pools all chains for moments and quantiles; ESS is summed over
    chains (capped at the total draw count) and R-hat is the split
    statistic across chains.  ``params`` restricts to a list of scalar
    labels; latent imputations and allocations are excluded unless
    ``include_latent`` is set.  Returns a list of
    :class:`ParamSummary`; see :func:`summary_frame` for a table.
    """
    out = []
    labels = store.scalar_labels()
    if include_latent:
        labels = labels + _latent_labels(store)
    wanted = set(params) if params is not None else None
    for label, name, idx in labels:
        if wanted is not None and label not in wanted:
            continue
        series = store.draws[name][(slice(None), slice(None)) + idx]
        pooled = series.reshape(-1).astype(float)
        ess_vals = [ess(series[ci]) for ci in range(series.shape[0])]
        note = ""
        if any(v is None for v in ess_vals):
            total_ess = None
            note = "ess-undefined"
        else:
            total_ess = float(min(sum(ess_vals), pooled.size))
        q = np.quantile(pooled, [0.025, 0.25, 0.5, 0.75, 0.975])
        out.append(ParamSummary(
            name=label, mean=float(pooled.mean()),
            sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
            median=float(q[2]), q2_5=float(q[0]), q25=float(q[1]),
            q75=float(q[3]), q97_5=float(q[4]),
            ess=total_ess, rhat=split_rhat(series),
            excludes_zero=bool(q[0] > 0.0 or q[4] < 0.0), note=note))
    return out


def _latent_labels(store):
    out = []
    for name, key in (("z1_cens", "cens1_ids"), ("z2_cens", "cens2_ids")):
        ids = store.labels.get(key, [])
        for i, pid in enumerate(ids):
            out.append((f"{name}[{pid}]", name, (i,)))
    return out


def summary_frame(summaries):
    """DataFrame view of a list of :class:`ParamSummary`."""
    return pd.DataFrame([vars(s) for s in summaries]).set_index("name")

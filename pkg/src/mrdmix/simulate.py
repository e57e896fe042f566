"""Synthetic data generation and simulation-based calibration (SBC).

The generator draws covariates from configurable marginals, LC50
profiles from the mixture, then both MRD responses from the gated
regression; values at or below the detection limit become censored.
SBC repeatedly draws ground truth from the model prior, fits the
sampler to data simulated under that truth, and rank-compares: with a
correct sampler the rank of the truth among the retained draws is
uniform, which a chi-square test checks per monitored parameter.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import chisquare

from .data import (DEFAULT_SUBTYPES, DRUGS, PROTOCOLS, Z_LOW, PatientRecord,
                   build_design)
from .model import (Day15Params, Day42Params, HorseshoeBlock,
                    INTERCEPT_PRIOR_VAR, MixtureState, RHO_PRIOR_VAR,
                    SIGMA2_PRIOR_RATE, SIGMA2_PRIOR_SHAPE,
                    COMP_VAR_PRIOR_RATE, COMP_VAR_PRIOR_SHAPE,
                    cluster_dummies)
from .numerics import half_cauchy_draw, invgamma_draw
from .sampler import McmcConfig, ModelData, relabel_canonical, run_chain

DEFAULT_SUBTYPE_FREQS = {
    "ETV6-RUNX1": 0.22, "BCR-ABL1": 0.03, "DUX4": 0.07,
    "Hyperdiploid": 0.22, "Hypodiploid": 0.02, "KMT2A": 0.04,
    "Other": 0.06, "PAX5alt": 0.06, "Ph-like": 0.06, "T-ALL": 0.12,
    "TCF3-PBX1": 0.08, "iAMP21": 0.02,
}
DEFAULT_PROTOCOL_FREQS = {"T15": 192 / 788, "T16": 428 / 788,
                          "T17": 168 / 788}


@dataclass
class CovariateSettings:
    """Marginals for simulated covariates."""

    n: int = 788
    age_low: float = 1.0
    age_high: float = 18.0
    log10_wbc_mean: float = 1.2
    log10_wbc_sd: float = 0.5
    p_male: float = 0.55
    protocol_freqs: dict = field(
        default_factory=lambda: dict(DEFAULT_PROTOCOL_FREQS))
    subtype_freqs: dict = field(
        default_factory=lambda: dict(DEFAULT_SUBTYPE_FREQS))


@dataclass
class TrueParams:
    """Ground-truth parameter set for simulation and recovery checks.

    The mixture state carries no allocations; those are drawn per
    patient by the generator.
    """

    theta1: Day15Params
    theta2: Day42Params
    mixture: MixtureState

    def canonical(self):
        """Truth relabeled exactly like stored draws are."""
        t1, t2, mix, _ = relabel_canonical(self.theta1, self.theta2,
                                           self.mixture)
        return TrueParams(theta1=t1, theta2=t2, mixture=mix)


@dataclass
class SimulatedDataset:
    """Generator output: records plus the latent ground truth."""

    records: list
    allocations: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    monotone_violations: int


def default_truth(p, k=3, d=5, rho=1.0, rho0=0.0, separation=3.0,
                  beta0_1=-0.5, beta0_2=-1.0, sigma2_1=1.0, sigma2_2=1.0,
                  large_effects=((0, 1.0), (2, -1.0))):
    """Sparse fixed truth: a few large day-15 effects, the rest zero.

    Mixture components sit at ``separation * (j - (k+1)/2)`` on every
    coordinate, ascending in the first drug, with unit variances and
    equal weights.
    """
    beta1 = np.zeros(p)
    for idx, val in large_effects:
        beta1[idx] = val
    t1 = Day15Params(beta0=beta0_1, beta=beta1, gamma=np.zeros(k - 1),
                     sigma2=sigma2_1, hs_beta=HorseshoeBlock.unit(p),
                     hs_gamma=HorseshoeBlock.unit(k - 1))
    t2 = Day42Params(beta0=beta0_2, rho0=rho0, rho=rho, beta=np.zeros(p),
                     gamma=np.zeros(k - 1), sigma2=sigma2_2,
                     hs_beta=HorseshoeBlock.unit(p),
                     hs_gamma=HorseshoeBlock.unit(k - 1))
    offsets = separation * (np.arange(1, k + 1) - (k + 1) / 2.0)
    mix = MixtureState(k=k, w=np.full(k, 1.0 / k),
                       mu=np.tile(offsets[:, None], (1, d)),
                       comp_var=np.ones(k))
    return TrueParams(theta1=t1, theta2=t2, mixture=mix)


def _draw_hs_block(rng, m):
    xi = float(invgamma_draw(rng, 0.5, 1.0))
    tau2 = float(invgamma_draw(rng, 0.5, 1.0 / xi))
    nu = np.atleast_1d(invgamma_draw(rng, 0.5, np.ones(m)))
    lambda2 = np.atleast_1d(invgamma_draw(rng, 0.5, 1.0 / nu))
    block = HorseshoeBlock(tau2=tau2, xi=xi, lambda2=lambda2, nu=nu)
    coeffs = rng.standard_normal(m) * np.sqrt(block.coefficient_variances())
    return block, coeffs


def draw_true_params(rng, p, k=3, d=5):
    """One draw of every parameter from the model prior (for SBC)."""
    hs_b1, beta1 = _draw_hs_block(rng, p)
    hs_g1, gamma1 = _draw_hs_block(rng, k - 1)
    t1 = Day15Params(
        beta0=float(rng.normal(0.0, np.sqrt(INTERCEPT_PRIOR_VAR))),
        beta=beta1, gamma=gamma1,
        sigma2=float(invgamma_draw(rng, SIGMA2_PRIOR_SHAPE,
                                   SIGMA2_PRIOR_RATE)),
        hs_beta=hs_b1, hs_gamma=hs_g1)
    hs_b2, beta2 = _draw_hs_block(rng, p)
    hs_g2, gamma2 = _draw_hs_block(rng, k - 1)
    t2 = Day42Params(
        beta0=float(rng.normal(0.0, np.sqrt(INTERCEPT_PRIOR_VAR))),
        rho0=float(rng.normal(0.0, np.sqrt(RHO_PRIOR_VAR))),
        rho=float(rng.normal(0.0, np.sqrt(RHO_PRIOR_VAR))),
        beta=beta2, gamma=gamma2,
        sigma2=float(invgamma_draw(rng, SIGMA2_PRIOR_SHAPE,
                                   SIGMA2_PRIOR_RATE)),
        hs_beta=hs_b2, hs_gamma=hs_g2)
    mix = MixtureState(
        k=k, w=rng.dirichlet(np.full(k, 1.0 / k)),
        mu=rng.standard_normal((k, d)),
        comp_var=invgamma_draw(rng, COMP_VAR_PRIOR_SHAPE,
                               np.full(k, COMP_VAR_PRIOR_RATE)))
    return TrueParams(theta1=t1, theta2=t2, mixture=mix)


def simulate_responses(truth, x, rng):
    """Draw (c, y, z1, delta1, z2, delta2) for a fixed design matrix.

    Returns a dict of arrays.  Censoring applies at the detection
    limit; the day-42 gate uses the day-15 indicator, so patients
    censored at day 15 get intercept-only day-42 means.
    """
    n = x.shape[0]
    mix = truth.mixture
    c = 1 + (rng.random((n, 1)) > np.cumsum(mix.w)[None, :]).sum(axis=1)
    c = np.minimum(c, mix.k)
    y = mix.mu[c - 1] + rng.standard_normal((n, mix.d)) \
        * np.sqrt(mix.comp_var[c - 1])[:, None]

    cd = cluster_dummies(c, mix.k)
    mu1 = truth.theta1.beta0 + x @ truth.theta1.beta + cd @ truth.theta1.gamma
    z1 = mu1 + rng.standard_normal(n) * np.sqrt(truth.theta1.sigma2)
    delta1 = (z1 > Z_LOW).astype(int)

    inner = (truth.theta2.rho0 + truth.theta2.rho * z1
             + x @ truth.theta2.beta + cd @ truth.theta2.gamma)
    mu2 = truth.theta2.beta0 + delta1 * inner
    z2 = mu2 + rng.standard_normal(n) * np.sqrt(truth.theta2.sigma2)
    delta2 = (z2 > Z_LOW).astype(int)
    return {"c": c, "y": y, "z1": z1, "delta1": delta1,
            "z2": z2, "delta2": delta2}


def simulate_dataset(truth, settings=None, rng_or_seed=0,
                     strict_monotone=False):
    """Generate a full synthetic dataset of :class:`PatientRecord`.

    With ``strict_monotone`` any day-42 detection following an
    undetectable day-15 value is forced censored so the dataset
    satisfies the parser's monotone-censoring rule; the count of such
    flips is reported in ``monotone_violations``.
    """
    settings = settings or CovariateSettings()
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) \
        else np.random.default_rng(rng_or_seed)
    n = settings.n

    age = rng.uniform(settings.age_low, settings.age_high, size=n)
    gender = np.where(rng.random(n) < settings.p_male, "M", "F")
    wbc = 10.0 ** rng.normal(settings.log10_wbc_mean, settings.log10_wbc_sd,
                             size=n)
    protos = list(settings.protocol_freqs)
    protocol = rng.choice(protos, size=n,
                          p=np.array([settings.protocol_freqs[q]
                                      for q in protos]))
    subs = list(settings.subtype_freqs)
    pvec = np.array([settings.subtype_freqs[sname] for sname in subs])
    subtype = rng.choice(subs, size=n, p=pvec / pvec.sum())

    base = [PatientRecord(id=f"P{i:04d}", age=float(age[i]),
                          gender=str(gender[i]), wbc=float(wbc[i]),
                          subtype=str(subtype[i]),
                          protocol=str(protocol[i]), mrd1=None, mrd2=None,
                          lc50=(np.nan,) * len(DRUGS))
            for i in range(n)]
    design = build_design(base, standardize=True, subtype_levels=subs
                          if set(subs) >= set(subtype) else None,
                          protocol_levels=PROTOCOLS)
    if design.p != truth.theta1.beta.size:
        raise ValueError(
            f"truth has {truth.theta1.beta.size} coefficients but the "
            f"design has {design.p} columns")

    resp = simulate_responses(truth, design.x, rng)
    violations = int(np.sum((resp["delta1"] == 0) & (resp["delta2"] == 1)))
    if strict_monotone:
        resp["delta2"] = resp["delta2"] * resp["delta1"]

    records = []
    for i, rec in enumerate(base):
        mrd1 = float(10.0 ** resp["z1"][i]) if resp["delta1"][i] else None
        mrd2 = float(10.0 ** resp["z2"][i]) if resp["delta2"][i] else None
        records.append(dataclasses.replace(
            rec, mrd1=mrd1, mrd2=mrd2,
            lc50=tuple(float(v) for v in resp["y"][i])))
    return SimulatedDataset(records=records, allocations=resp["c"],
                            z1=resp["z1"], z2=resp["z2"],
                            monotone_violations=violations)


# ---------------------------------------------------------------------------
# Simulation-based calibration
# ---------------------------------------------------------------------------

SBC_PARAMS = ("rho", "rho0", "sigma2_1", "sigma2_2", "beta0_1", "beta0_2",
              "beta_1[x0]", "mu[1][asparaginase]")


def _sbc_design(rng, n, p):
    """Simple fixed design for calibration runs: standard-normal
    continuous columns plus a binary column when p > 1."""
    x = rng.standard_normal((n, p))
    if p > 1:
        x[:, 1] = (rng.random(n) < 0.5).astype(float)
    return x


def _truth_value(truth, label):
    """Scalar ground-truth value for a monitored store label.

    The truth is canonicalized with the same relabeling applied to
    stored draws, so label-sensitive quantities (component means, the
    absorbed intercepts) compare like with like.
    """
    canon = truth.canonical()
    values = {
        "rho": canon.theta2.rho, "rho0": canon.theta2.rho0,
        "sigma2_1": canon.theta1.sigma2, "sigma2_2": canon.theta2.sigma2,
        "beta0_1": canon.theta1.beta0, "beta0_2": canon.theta2.beta0,
    }
    if label in values:
        return float(values[label])
    if label.startswith("beta_1[x"):
        return float(canon.theta1.beta[int(label[8:-1])])
    if label.startswith("mu["):
        j = int(label[3:].split("]")[0])
        return float(canon.mixture.mu[j - 1, 0])
    raise KeyError(label)


def _sbc_replicate(args):
    (seed_seq, n, p, k, d, iterations, burn_in, thin, params) = args
    rng = np.random.default_rng(seed_seq)
    truth = draw_true_params(rng, p, k=k, d=d)
    x = _sbc_design(rng, n, p)
    resp = simulate_responses(truth, x, rng)
    data = ModelData.from_arrays(
        x=x, z1_obs=np.where(resp["delta1"] == 1, resp["z1"], np.nan),
        delta1=resp["delta1"],
        z2_obs=np.where(resp["delta2"] == 1, resp["z2"], np.nan),
        delta2=resp["delta2"], lc50=resp["y"])
    config = McmcConfig(iterations=iterations, burn_in=burn_in, thin=thin,
                        chains=1, seed=0, k=k)
    store = run_chain(config, data, rng=rng)
    ranks = {}
    for label in params:
        draws = store.scalar_series(label)[0]
        ranks[label] = int(np.sum(draws < _truth_value(truth, label)))
    return ranks


@dataclass
class SbcReport:
    """Rank-uniformity report over SBC replicates."""

    params: list
    ranks: dict
    n_draws: int
    replicates: int
    failures: int
    chi2: dict
    pvalue: dict

    def to_frame(self):
        return pd.DataFrame({
            "chi2": pd.Series(self.chi2),
            "pvalue": pd.Series(self.pvalue)})


def rank_uniformity_test(ranks, n_draws, n_bins=20):
    """Chi-square test of rank uniformity over {0..n_draws}.

    Ranks take n_draws + 1 integer values; bins carry their exact
    expected counts (bin widths may differ by one integer).
    """
    ranks = np.asarray(ranks, dtype=int)
    edges = np.linspace(0.0, n_draws + 1.0, n_bins + 1)
    counts, _ = np.histogram(ranks, bins=edges)
    # bin the full integer grid the same way so each bin's expected
    # count is exact even when bin widths differ by one integer
    grid_counts, _ = np.histogram(np.arange(n_draws + 1), bins=edges)
    expected = grid_counts * ranks.size / (n_draws + 1.0)
    stat, pvalue = chisquare(counts, expected)
    return float(stat), float(pvalue)


def sbc_run(replicates=200, n=100, p=3, k=3, d=5, iterations=2000,
            burn_in=500, thin=3, seed=0, params=SBC_PARAMS, n_jobs=1):
    """Run SBC and test rank uniformity for each monitored parameter.

    Each replicate draws truth from the prior, simulates a dataset of
    size ``n`` conditioned on a fresh design, runs one chain, and
    records the rank of the truth among the retained draws.  Failed
    replicates (numerical errors) are skipped and counted.
    """
    root = np.random.SeedSequence(seed)
    # SeedSequence objects pickle cleanly; pass them to workers whole
    jobs = [(child, n, p, k, d, iterations, burn_in, thin, tuple(params))
            for child in root.spawn(replicates)]

    results = []
    failures = 0
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for res in pool.map(_sbc_replicate_safe, jobs):
                if res is None:
                    failures += 1
                else:
                    results.append(res)
    else:
        for job in jobs:
            res = _sbc_replicate_safe(job)
            if res is None:
                failures += 1
            else:
                results.append(res)

    if not results:
        raise RuntimeError("every SBC replicate failed")
    n_draws = (iterations - burn_in) // thin
    ranks = {label: np.array([r[label] for r in results])
             for label in params}
    chi2, pvalue = {}, {}
    for label in params:
        if len(results) < 20:
            # too few replicates for a 20-bin test; report ranks only
            chi2[label] = pvalue[label] = None
        else:
            chi2[label], pvalue[label] = rank_uniformity_test(ranks[label],
                                                              n_draws)
    return SbcReport(params=list(params), ranks=ranks, n_draws=n_draws,
                     replicates=replicates, failures=failures,
                     chi2=chi2, pvalue=pvalue)


def _sbc_replicate_safe(args):
    try:
        return _sbc_replicate(args)
    except Exception:
        return None

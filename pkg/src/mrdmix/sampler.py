"""Metropolis-within-Gibbs sampler for the joint censored-regression
mixture model.

Every block update is an exact draw from its full conditional; one
sweep visits, in fixed order: a collapsed Metropolis refresh of every
regression coefficient plus ridge-translation moves (censored
responses integrated out; see :func:`update_collapsed_mh` and
:func:`_ridge_translation_mh`), censored-response imputation, the
day-15 linear block, its two horseshoe blocks, sigma2(day 15), the
day-42 linear block, its two horseshoe blocks, sigma2(day 42),
allocations, then the mixture parameters.  Retained draws are
relabeled to a canonical component order (ascending first-drug mean)
at storage time; the chain state itself is never relabeled, so the
posterior is not distorted.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import (LinAlgError, cho_solve, cholesky, null_space,
                          solve_triangular)
from scipy.special import logsumexp

from .data import (DesignMatrix, Z_LOW, build_design, lc50_matrix,
                   require_complete_lc50, standardize_lc50)
from .model import (Day15Params, Day42Params, HorseshoeBlock,
                    INTERCEPT_PRIOR_VAR, LatentResponses, MixtureState,
                    RHO_PRIOR_VAR, SIGMA2_PRIOR_RATE, SIGMA2_PRIOR_SHAPE,
                    COMP_VAR_PRIOR_RATE, COMP_VAR_PRIOR_SHAPE, MU_PRIOR_VAR,
                    cluster_dummies, loglik_censored, loglik_uncensored,
                    mean_day15_all, mean_day42_all)
from .numerics import invgamma_draw, normal_logpdf, trunc_normal_left

# Coefficient magnitudes are clipped here before squaring in the
# horseshoe rate computations so the rates stay finite.
_COEF_OVERFLOW_GUARD = 1e150


class NumericalError(RuntimeError):
    """A linear-algebra failure (e.g. non-positive-definite precision)."""


@dataclass
class McmcConfig:
    """Chain length and model-size settings."""

    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 2
    chains: int = 3
    seed: int = 0
    k: int = 3

    def __post_init__(self):
        if self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.chains < 1 or self.k < 1:
            raise ValueError("thin, chains and k must be >= 1")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ModelData:
    """Dataset in array form, as consumed by the kernels.

    ``z1_obs``/``z2_obs`` hold observed log10 MRD with NaN at censored
    positions; ``lc50`` is the (possibly column-standardized) matrix
    the mixture runs on, ``lc50_raw`` the original values.
    """

    x: np.ndarray
    z1_obs: np.ndarray
    delta1: np.ndarray
    z2_obs: np.ndarray
    delta2: np.ndarray
    lc50: np.ndarray
    lc50_raw: np.ndarray
    ids: list[str]
    design: DesignMatrix | None = None
    lc50_transforms: list | None = None

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("z1_obs", "delta1", "z2_obs", "delta2"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if self.lc50.shape[0] != n:
            raise ValueError("lc50 row count mismatch")
        for d, z in ((self.delta1, self.z1_obs), (self.delta2, self.z2_obs)):
            obs = d == 1
            if not np.all(np.isfinite(z[obs])):
                raise ValueError("observed responses must be finite")
            if np.any(z[obs] < Z_LOW - 1e-9):
                raise ValueError("observed responses below detection limit")
        if not np.all(np.isfinite(self.lc50)):
            raise ValueError("lc50 matrix must be complete and finite")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def cens1(self) -> np.ndarray:
        return np.nonzero(self.delta1 == 0)[0]

    @property
    def cens2(self) -> np.ndarray:
        return np.nonzero(self.delta2 == 0)[0]

    @classmethod
    def from_records(cls, records, standardize_covariates=True,
                     lc50_standardize=True, subtype_levels=None):
        records = list(records)
        require_complete_lc50(records)
        design = build_design(records, standardize=standardize_covariates,
                              subtype_levels=subtype_levels)
        z1 = np.array([np.nan if r.z1 is None else r.z1 for r in records])
        z2 = np.array([np.nan if r.z2 is None else r.z2 for r in records])
        d1 = np.array([r.delta1 for r in records], dtype=int)
        d2 = np.array([r.delta2 for r in records], dtype=int)
        raw = lc50_matrix(records)
        if lc50_standardize:
            y, trans = standardize_lc50(raw)
        else:
            y, trans = raw.copy(), None
        return cls(x=design.x, z1_obs=z1, delta1=d1, z2_obs=z2, delta2=d2,
                   lc50=y, lc50_raw=raw, ids=[r.id for r in records],
                   design=design, lc50_transforms=trans)

    @classmethod
    def from_arrays(cls, x, z1_obs, delta1, z2_obs, delta2, lc50, ids=None):
        x = np.asarray(x, dtype=float)
        lc50 = np.asarray(lc50, dtype=float)
        if ids is None:
            ids = [str(i) for i in range(x.shape[0])]
        return cls(x=x, z1_obs=np.asarray(z1_obs, dtype=float),
                   delta1=np.asarray(delta1, dtype=int),
                   z2_obs=np.asarray(z2_obs, dtype=float),
                   delta2=np.asarray(delta2, dtype=int),
                   lc50=lc50, lc50_raw=lc50.copy(), ids=list(ids))

    @classmethod
    def coerce(cls, data_or_records, **kwargs):
        if isinstance(data_or_records, cls):
            return data_or_records
        return cls.from_records(data_or_records, **kwargs)


@dataclass
class ChainState:
    """Full sampler state for one chain."""

    theta1: Day15Params
    theta2: Day42Params
    mixture: MixtureState
    latent: LatentResponses


def _copy_state(state):
    t1 = dataclasses.replace(
        state.theta1, beta=state.theta1.beta.copy(),
        gamma=state.theta1.gamma.copy(),
        hs_beta=dataclasses.replace(state.theta1.hs_beta,
                                    lambda2=state.theta1.hs_beta.lambda2.copy(),
                                    nu=state.theta1.hs_beta.nu.copy()),
        hs_gamma=dataclasses.replace(state.theta1.hs_gamma,
                                     lambda2=state.theta1.hs_gamma.lambda2.copy(),
                                     nu=state.theta1.hs_gamma.nu.copy()))
    t2 = dataclasses.replace(
        state.theta2, beta=state.theta2.beta.copy(),
        gamma=state.theta2.gamma.copy(),
        hs_beta=dataclasses.replace(state.theta2.hs_beta,
                                    lambda2=state.theta2.hs_beta.lambda2.copy(),
                                    nu=state.theta2.hs_beta.nu.copy()),
        hs_gamma=dataclasses.replace(state.theta2.hs_gamma,
                                     lambda2=state.theta2.hs_gamma.lambda2.copy(),
                                     nu=state.theta2.hs_gamma.nu.copy()))
    mix = dataclasses.replace(state.mixture, w=state.mixture.w.copy(),
                              mu=state.mixture.mu.copy(),
                              comp_var=state.mixture.comp_var.copy(),
                              c=state.mixture.c.copy())
    lat = LatentResponses(z1=state.latent.z1.copy(),
                          z2=state.latent.z2.copy())
    return ChainState(theta1=t1, theta2=t2, mixture=mix, latent=lat)


def initial_state(data, k, rng, kmeans_restarts=10):
    """Deterministic-given-rng starting state.

    Coefficients start at zero, variances and horseshoe scales at one,
    allocations at a k-means partition of the LC50 matrix, censored
    responses half a log-unit below the detection limit.
    """
    from .clustering import kmeans

    labels, _ = kmeans(data.lc50, k, rng, restarts=kmeans_restarts)
    z1 = np.where(data.delta1 == 1, np.nan_to_num(data.z1_obs), Z_LOW - 0.5)
    z2 = np.where(data.delta2 == 1, np.nan_to_num(data.z2_obs), Z_LOW - 0.5)
    p = data.x.shape[1]
    return ChainState(
        theta1=Day15Params.initial(p, k),
        theta2=Day42Params.initial(p, k),
        mixture=MixtureState.initial(k, data.lc50.shape[1], labels),
        latent=LatentResponses(z1=z1, z2=z2))


# ---------------------------------------------------------------------------
# Conjugate full-conditional parameters (exposed for exact verification)
# ---------------------------------------------------------------------------

def linear_posterior_params(x, z, sigma2, prior_prec):
    """Gaussian full conditional for coefficients of z = x @ coef + eps.

    Returns ``(mean, precision)`` where precision = x'x / sigma2 +
    diag(prior_prec) and mean solves precision @ mean = x'z / sigma2.
    """
    x = np.asarray(x, dtype=float)
    prec = x.T @ x / sigma2 + np.diag(np.asarray(prior_prec, dtype=float))
    b = x.T @ np.asarray(z, dtype=float) / sigma2
    try:
        chol = cholesky(prec, lower=True)
    except LinAlgError as exc:
        raise NumericalError(
            f"linear update: precision matrix not positive definite "
            f"(dim {prec.shape[0]}): {exc}") from exc
    mean = cho_solve((chol, True), b)
    return mean, prec


def _draw_gaussian_coefs(rng, x, z, sigma2, prior_prec, context):
    x = np.asarray(x, dtype=float)
    prec = x.T @ x / sigma2 + np.diag(np.asarray(prior_prec, dtype=float))
    b = x.T @ np.asarray(z, dtype=float) / sigma2
    try:
        chol = cholesky(prec, lower=True)
    except LinAlgError as exc:
        raise NumericalError(
            f"{context}: precision matrix not positive definite: {exc}"
        ) from exc
    mean = cho_solve((chol, True), b)
    eta = rng.standard_normal(mean.size)
    return mean + solve_triangular(chol, eta, lower=True, trans="T")


def sigma2_posterior_params(residuals, prior_shape=SIGMA2_PRIOR_SHAPE,
                            prior_rate=SIGMA2_PRIOR_RATE):
    """Inverse-gamma full-conditional (shape, rate) for a noise variance."""
    r = np.asarray(residuals, dtype=float)
    return prior_shape + r.size / 2.0, prior_rate + float(r @ r) / 2.0


def horseshoe_posterior_params(block, coeffs):
    """Inverse-gamma (shape, rate) pairs for one horseshoe block.

    Returns a dict with entries ``lambda2``, ``nu``, ``tau2``, ``xi``;
    the lambda2/nu values are vectors.  Rates for lambda2 and tau2
    condition on the block's current nu, tau2 and xi, matching the
    first two steps of :func:`update_horseshoe`.
    """
    b2 = np.square(np.clip(np.abs(np.asarray(coeffs, dtype=float)),
                           0.0, _COEF_OVERFLOW_GUARD))
    m = b2.size
    lam2_rate = 1.0 / block.nu + b2 / (2.0 * block.tau2)
    tau2_shape = (m + 1.0) / 2.0
    tau2_rate = 1.0 / block.xi + float(np.sum(b2 / block.lambda2)) / 2.0
    return {
        "lambda2": (1.0, lam2_rate),
        "nu": (1.0, 1.0 + 1.0 / block.lambda2),
        "tau2": (tau2_shape, tau2_rate),
        "xi": (1.0, 1.0 + 1.0 / block.tau2),
    }


def mixture_mu_posterior(y, c, k, comp_var):
    """Per-component Gaussian full conditional for the mixture means.

    Returns ``(means, precisions)`` with means (k, d) and scalar
    precision per component: prior N(0, I) times an isotropic
    likelihood gives precision (1 + n_j / sigma2_j) * I.
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(c, dtype=int)
    d = y.shape[1]
    means = np.zeros((k, d))
    precs = np.zeros(k)
    for j in range(k):
        rows = y[c == j + 1]
        nj = rows.shape[0]
        precs[j] = 1.0 / MU_PRIOR_VAR + nj / comp_var[j]
        if nj:
            means[j] = rows.sum(axis=0) / comp_var[j] / precs[j]
    return means, precs


def mixture_var_posterior(y, c, k, mu):
    """Inverse-gamma (shapes, rates) for the component variances."""
    y = np.asarray(y, dtype=float)
    c = np.asarray(c, dtype=int)
    d = y.shape[1]
    shapes = np.zeros(k)
    rates = np.zeros(k)
    for j in range(k):
        rows = y[c == j + 1]
        nj = rows.shape[0]
        shapes[j] = COMP_VAR_PRIOR_SHAPE + nj * d / 2.0
        rates[j] = COMP_VAR_PRIOR_RATE + float(((rows - mu[j]) ** 2).sum()) / 2.0
    return shapes, rates


def weight_posterior(c, k):
    """Dirichlet parameter vector for the mixture weights."""
    counts = np.bincount(np.asarray(c, dtype=int) - 1, minlength=k)
    return 1.0 / k + counts.astype(float)


# ---------------------------------------------------------------------------
# Gibbs kernels
# ---------------------------------------------------------------------------

def impute_censored(state, data, rng):
    """Redraw censored responses from their truncated-normal conditionals.

    Observed entries pass through unchanged; censored entries are drawn
    from N(mu, sigma2) restricted to (-inf, Z_LOW].  The day-42 mean is
    gated by the day-15 censoring indicator, so imputed day-15 values
    never feed the day-42 mean.
    """
    data = ModelData.coerce(data)
    c = state.mixture.c
    z1 = np.where(data.delta1 == 1, np.nan_to_num(data.z1_obs), 0.0)
    idx1 = data.cens1
    if idx1.size:
        mu1 = state.theta1.beta0 + data.x @ state.theta1.beta \
            + cluster_dummies(c, state.mixture.k) @ state.theta1.gamma
        z1[idx1] = trunc_normal_left(rng, mu1[idx1],
                                     np.sqrt(state.theta1.sigma2), Z_LOW)
    z2 = np.where(data.delta2 == 1, np.nan_to_num(data.z2_obs), 0.0)
    idx2 = data.cens2
    if idx2.size:
        mu2 = mean_day42_all(z1, data.delta1, data.x, c, state.theta2)
        z2[idx2] = trunc_normal_left(rng, mu2[idx2],
                                     np.sqrt(state.theta2.sigma2), Z_LOW)
    return LatentResponses(z1=z1, z2=z2)


def update_linear_day15(state, data, rng):
    """Joint conjugate draw of (beta0, beta, gamma) for day 15."""
    data = ModelData.coerce(data)
    t1 = state.theta1
    k = state.mixture.k
    cd = cluster_dummies(state.mixture.c, k)
    xfull = np.column_stack([np.ones(data.n), data.x, cd])
    prior_prec = np.concatenate([
        [1.0 / INTERCEPT_PRIOR_VAR],
        1.0 / t1.hs_beta.coefficient_variances(),
        1.0 / t1.hs_gamma.coefficient_variances()])
    coef = _draw_gaussian_coefs(rng, xfull, state.latent.z1, t1.sigma2,
                                prior_prec, "day-15 linear update")
    p = data.x.shape[1]
    return dataclasses.replace(t1, beta0=float(coef[0]),
                               beta=coef[1:1 + p], gamma=coef[1 + p:])


def update_linear_day42(state, data, rng):
    """Joint conjugate draw of (beta0, rho0, rho, beta, gamma) for day 42.

    Columns after the intercept are gated by delta1, so patients whose
    day-15 MRD was undetectable inform only the intercept; when no
    patient has delta1 = 1 the gated block reduces exactly to its prior.
    """
    data = ModelData.coerce(data)
    t2 = state.theta2
    k = state.mixture.k
    cd = cluster_dummies(state.mixture.c, k)
    d1 = data.delta1.astype(float)
    xfull = np.column_stack([
        np.ones(data.n), d1, d1 * state.latent.z1,
        d1[:, None] * data.x, d1[:, None] * cd])
    prior_prec = np.concatenate([
        [1.0 / INTERCEPT_PRIOR_VAR],
        [1.0 / RHO_PRIOR_VAR, 1.0 / RHO_PRIOR_VAR],
        1.0 / t2.hs_beta.coefficient_variances(),
        1.0 / t2.hs_gamma.coefficient_variances()])
    coef = _draw_gaussian_coefs(rng, xfull, state.latent.z2, t2.sigma2,
                                prior_prec, "day-42 linear update")
    p = data.x.shape[1]
    return dataclasses.replace(t2, beta0=float(coef[0]), rho0=float(coef[1]),
                               rho=float(coef[2]), beta=coef[3:3 + p],
                               gamma=coef[3 + p:])


def update_horseshoe(block, coeffs, rng):
    """One Gibbs scan of a horseshoe block's scale hierarchy.

    All four conditionals are inverse-gamma thanks to the auxiliary
    parameterization: lambda2_j | nu_j ~ IG(1/2, 1/nu_j) and
    tau2 | xi ~ IG(1/2, 1/xi) reproduce half-Cauchy marginals.
    """
    b2 = np.square(np.clip(np.abs(np.asarray(coeffs, dtype=float)),
                           0.0, _COEF_OVERFLOW_GUARD))
    m = b2.size
    lambda2 = invgamma_draw(rng, 1.0, 1.0 / block.nu + b2 / (2.0 * block.tau2))
    nu = invgamma_draw(rng, 1.0, 1.0 + 1.0 / lambda2)
    tau2 = float(invgamma_draw(
        rng, (m + 1.0) / 2.0,
        1.0 / block.xi + float(np.sum(b2 / lambda2)) / 2.0))
    xi = float(invgamma_draw(rng, 1.0, 1.0 + 1.0 / tau2))
    return HorseshoeBlock(tau2=tau2, xi=xi, lambda2=np.atleast_1d(lambda2),
                          nu=np.atleast_1d(nu))


def update_sigma2(residuals, rng, prior_shape=SIGMA2_PRIOR_SHAPE,
                  prior_rate=SIGMA2_PRIOR_RATE):
    """Conjugate inverse-gamma draw for a noise variance."""
    shape, rate = sigma2_posterior_params(residuals, prior_shape, prior_rate)
    return float(invgamma_draw(rng, shape, rate))


def _collapsed_coef_mh(rng, coef, column, offsets, z, delta, sigma2,
                       prior_var):
    """Independence-proposal MH step on one regression coefficient,
    censored responses integrated out.

    The row means are ``coef * column + offsets``.  Proposing from the
    N(0, prior_var) prior cancels the prior from the acceptance ratio,
    leaving the marginal (censored) likelihood ratio: detected rows
    contribute normal densities, censored rows the normal mass below
    the detection limit.
    """
    obs = delta == 1

    def marginal_loglik(b):
        mu = b * column + offsets
        ll = float(np.sum(loglik_uncensored(z[obs], mu[obs], sigma2)))
        if np.any(~obs):
            ll += float(np.sum(loglik_censored(mu[~obs], sigma2)))
        return ll

    proposal = rng.normal(0.0, np.sqrt(prior_var))
    if np.log(rng.random()) < marginal_loglik(proposal) - marginal_loglik(coef):
        return float(proposal)
    return float(coef)


def _collapsed_mh_scan(rng, coefs, columns, prior_vars, mean, z, delta,
                       sigma2):
    """Sequential collapsed MH over a coefficient vector.

    ``mean`` is the current row-mean vector implied by ``coefs``; it is
    carried forward incrementally so each step conditions on the
    accepted values of the earlier ones.
    """
    out = np.asarray(coefs, dtype=float).copy()
    for j in range(out.size):
        offsets = mean - out[j] * columns[j]
        new = _collapsed_coef_mh(rng, out[j], columns[j], offsets, z, delta,
                                 sigma2, prior_vars[j])
        mean = offsets + new * columns[j]
        out[j] = new
    return out


_TRANSLATION_STEPS = (0.25, 1.0, 2.0)


def _ridge_translation_mh(rng, coefs, design, prior_vars, z, delta, sigma2,
                          n_steps=4):
    """Random-walk MH along likelihood-ridge directions, censored
    responses integrated out.

    With only a few detected responses the coefficient vector is
    constrained by a handful of row fits; the censored rows require the
    fitted means to stay (mostly) below the detection limit but are
    otherwise flat, so the posterior is a ridge whose axes mix several
    coefficients.  Single-coordinate updates cannot follow such a
    ridge: conditional on the others, each coefficient is pinned to a
    sigma-wide window even though its marginal spans the prior.  The
    ridge directions span the null space of the detected-row design in
    prior-whitened coordinates, so each step here proposes a spherical
    Gaussian move inside that null space.  Detected-row fits are
    unchanged by construction and the acceptance ratio reduces to the
    censored-row mass ratio times the prior ratio.  Censored
    imputations are stale after an accepted move and are redrawn
    immediately afterwards (see :func:`update_collapsed_mh`).
    """
    out = np.asarray(coefs, dtype=float).copy()
    obs = delta == 1
    sd = np.sqrt(np.asarray(prior_vars, dtype=float))
    if np.any(obs):
        basis = null_space(design[obs] * sd[None, :])
    else:
        basis = np.eye(out.size)
    if basis.shape[1] == 0:
        return out
    cens_design = design[~obs] * sd[None, :]
    u = out / sd
    cur_ll = float(np.sum(loglik_censored(cens_design @ u, sigma2)))
    for _ in range(n_steps):
        e = basis @ rng.normal(size=basis.shape[1])
        norm = float(np.linalg.norm(e))
        if norm == 0.0:
            continue
        cand = u + (rng.choice(_TRANSLATION_STEPS) * rng.normal() / norm) * e
        new_ll = float(np.sum(loglik_censored(cens_design @ cand, sigma2)))
        log_r = new_ll - cur_ll - 0.5 * float(cand @ cand - u @ u)
        if np.log(rng.random()) < log_r:
            u, cur_ll = cand, new_ll
    return u * sd


def update_collapsed_mh(state, data, rng):
    """Collapsed MH refresh of every regression coefficient.

    The conjugate linear blocks move each coefficient only ~one
    conditional standard deviation per sweep, so when (nearly) all of
    the responses informing it are censored -- a likelihood plateau --
    the imputation random walk takes O((prior sd / conditional sd)^2)
    sweeps to cross the plateau.  One independence proposal per sweep
    from each coefficient's prior (its conditional normal given the
    current horseshoe scales, for the shrunk blocks) accepted on the
    marginal likelihood ratio crosses a plateau in a single step; with
    the plateau covering the whole prior (e.g. the gate closed for
    every patient) the proposals are accepted with probability one and
    the draws are exact prior draws.  A handful of detected rows leave
    a multi-coefficient ridge the single-coordinate scan cannot
    follow, so each scan is followed by null-space translation moves
    (:func:`_ridge_translation_mh`).  Censored responses are stale
    after an accepted move; the imputation draw that follows in the
    same sweep redraws them from their exact conditional, so the
    composite kernel leaves the joint posterior invariant.
    """
    data = ModelData.coerce(data)
    t1, t2 = state.theta1, state.theta2
    cd = cluster_dummies(state.mixture.c, state.mixture.k)
    ones = np.ones(data.n)
    z1, z2 = state.latent.z1, state.latent.z2
    x = data.x
    p = x.shape[1]

    cols1 = [ones] + list(x.T) + list(cd.T)
    vars1 = np.concatenate([[INTERCEPT_PRIOR_VAR],
                            t1.hs_beta.coefficient_variances(),
                            t1.hs_gamma.coefficient_variances()])
    coefs1 = np.concatenate([[t1.beta0], t1.beta, t1.gamma])
    mean1 = t1.beta0 + x @ t1.beta + cd @ t1.gamma
    new1 = _collapsed_mh_scan(rng, coefs1, cols1, vars1, mean1, z1,
                              data.delta1, t1.sigma2)
    new1 = _ridge_translation_mh(rng, new1, np.column_stack(cols1), vars1,
                                 z1, data.delta1, t1.sigma2)
    t1 = dataclasses.replace(t1, beta0=float(new1[0]), beta=new1[1:1 + p],
                             gamma=new1[1 + p:])

    gate = data.delta1.astype(float)
    cols2 = ([ones, gate, gate * z1] + [gate * col for col in x.T]
             + [gate * col for col in cd.T])
    vars2 = np.concatenate([[INTERCEPT_PRIOR_VAR, RHO_PRIOR_VAR,
                             RHO_PRIOR_VAR],
                            t2.hs_beta.coefficient_variances(),
                            t2.hs_gamma.coefficient_variances()])
    coefs2 = np.concatenate([[t2.beta0, t2.rho0, t2.rho], t2.beta, t2.gamma])
    mean2 = t2.beta0 + gate * (t2.rho0 + t2.rho * z1 + x @ t2.beta
                               + cd @ t2.gamma)
    new2 = _collapsed_mh_scan(rng, coefs2, cols2, vars2, mean2, z2,
                              data.delta2, t2.sigma2)
    new2 = _ridge_translation_mh(rng, new2, np.column_stack(cols2), vars2,
                                 z2, data.delta2, t2.sigma2)
    t2 = dataclasses.replace(t2, beta0=float(new2[0]), rho0=float(new2[1]),
                             rho=float(new2[2]), beta=new2[3:3 + p],
                             gamma=new2[3 + p:])
    return t1, t2


def allocation_log_probs(state, data):
    """(N, k) matrix of normalized log allocation probabilities.

    Combines mixture responsibility with both regression likelihood
    terms (using the current latent responses); each row is normalized
    with log-sum-exp so the result exponentiates to rows summing to 1.
    """
    data = ModelData.coerce(data)
    mix = state.mixture
    k, d = mix.k, mix.d
    y = data.lc50
    sq = ((y[:, None, :] - mix.mu[None, :, :]) ** 2).sum(axis=2)
    ll = (np.log(mix.w)[None, :]
          - 0.5 * d * np.log(2.0 * np.pi * mix.comp_var)[None, :]
          - 0.5 * sq / mix.comp_var[None, :])

    eff1 = np.concatenate([[0.0], state.theta1.gamma])
    base1 = state.theta1.beta0 + data.x @ state.theta1.beta
    ll += normal_logpdf(state.latent.z1[:, None],
                        base1[:, None] + eff1[None, :], state.theta1.sigma2)

    eff2 = np.concatenate([[0.0], state.theta2.gamma])
    inner = (state.theta2.rho0 + state.theta2.rho * state.latent.z1
             + data.x @ state.theta2.beta)
    d1 = data.delta1.astype(float)[:, None]
    mu2 = state.theta2.beta0 + d1 * (inner[:, None] + eff2[None, :])
    ll += normal_logpdf(state.latent.z2[:, None], mu2, state.theta2.sigma2)

    return ll - logsumexp(ll, axis=1, keepdims=True)


def update_allocations(state, data, rng):
    """Multinomial draw of the allocation vector (labels 1..k)."""
    probs = np.exp(allocation_log_probs(state, data))
    u = rng.random((probs.shape[0], 1))
    c = 1 + (probs.cumsum(axis=1) < u).sum(axis=1)
    return np.minimum(c, state.mixture.k).astype(int)


def update_mixture_params(state, data, rng):
    """Conjugate draws of mixture means, variances and weights."""
    data = ModelData.coerce(data)
    mix = state.mixture
    y = data.lc50
    k = mix.k
    means, precs = mixture_mu_posterior(y, mix.c, k, mix.comp_var)
    mu = np.empty_like(mix.mu)
    for j in range(k):
        mu[j] = means[j] + rng.standard_normal(mix.d) / np.sqrt(precs[j])
    shapes, rates = mixture_var_posterior(y, mix.c, k, mu)
    comp_var = np.empty(k)
    for j in range(k):
        comp_var[j] = float(invgamma_draw(rng, shapes[j], rates[j]))
    w = rng.dirichlet(weight_posterior(mix.c, k))
    return dataclasses.replace(mix, w=w, mu=mu, comp_var=comp_var)


# ---------------------------------------------------------------------------
# Canonical relabeling (storage-time post-processing)
# ---------------------------------------------------------------------------

def relabel_canonical(theta1, theta2, mixture):
    """Permute components so first-drug means ascend; returns new objects.

    Cluster effects are expressed relative to cluster 1, so a label
    permutation re-expresses them: the permuted effect of the new
    reference is absorbed into the day-15 intercept (and into rho0
    inside the day-42 gate), leaving every patient mean exactly
    invariant.  Returns ``(theta1, theta2, mixture, changed)``.
    """
    order = np.argsort(mixture.mu[:, 0], kind="stable")
    if np.array_equal(order, np.arange(mixture.k)):
        return theta1, theta2, mixture, False
    inv = np.argsort(order)
    new_mix = dataclasses.replace(
        mixture, w=mixture.w[order], mu=mixture.mu[order],
        comp_var=mixture.comp_var[order],
        c=(inv[mixture.c - 1] + 1) if mixture.c.size else mixture.c)

    eff1 = np.concatenate([[0.0], theta1.gamma])[order]
    new_t1 = dataclasses.replace(theta1, beta0=theta1.beta0 + eff1[0],
                                 gamma=eff1[1:] - eff1[0])
    eff2 = np.concatenate([[0.0], theta2.gamma])[order]
    new_t2 = dataclasses.replace(theta2, rho0=theta2.rho0 + eff2[0],
                                 gamma=eff2[1:] - eff2[0])
    return new_t1, new_t2, new_mix, True


# ---------------------------------------------------------------------------
# Sample storage
# ---------------------------------------------------------------------------

def _param_shapes(p, k, d, n_cens1, n_cens2):
    return {
        "beta0_1": (), "beta_1": (p,), "gamma_1": (k - 1,), "sigma2_1": (),
        "tau2_beta_1": (), "xi_beta_1": (), "lambda2_beta_1": (p,),
        "nu_beta_1": (p,), "tau2_gamma_1": (), "xi_gamma_1": (),
        "lambda2_gamma_1": (k - 1,), "nu_gamma_1": (k - 1,),
        "beta0_2": (), "rho0": (), "rho": (), "beta_2": (p,),
        "gamma_2": (k - 1,), "sigma2_2": (),
        "tau2_beta_2": (), "xi_beta_2": (), "lambda2_beta_2": (p,),
        "nu_beta_2": (p,), "tau2_gamma_2": (), "xi_gamma_2": (),
        "lambda2_gamma_2": (k - 1,), "nu_gamma_2": (k - 1,),
        "w": (k,), "mu": (k, d), "comp_var": (k,),
        "c": None,  # int array, shape (n,)
        "z1_cens": (n_cens1,), "z2_cens": (n_cens2,),
    }


@dataclass
class SampleStore:
    """Retained draws for one or more chains.

    ``draws[name]`` has shape (chains, n_retained, *param_shape); the
    allocation draws are integer-typed.  ``labels`` carries the column
    names needed to print scalar summaries (covariate names, drug
    names, censored-patient ids).
    """

    config: McmcConfig
    draws: dict
    iterations: np.ndarray
    labels: dict
    chain_streams: list
    relabel_counts: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_retained(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def get(self, name):
        return self.draws[name]

    def pooled(self, name):
        """Draws with the chain axis flattened away."""
        arr = self.draws[name]
        return arr.reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])

    def scalar_labels(self):
        """Deterministic list of (label, name, index-tuple) triples for
        every stored scalar except allocations and imputed responses."""
        cov = self.labels["covariates"]
        drugs = self.labels["drugs"]
        k = self.config.k
        out = []
        for name, arr in self.draws.items():
            if name in ("c", "z1_cens", "z2_cens"):
                continue
            shape = arr.shape[2:]
            if shape == ():
                out.append((name, name, ()))
            elif len(shape) == 1:
                for i in range(shape[0]):
                    if name.endswith(("beta_1", "beta_2")) and len(cov) == shape[0]:
                        tag = cov[i]
                    elif name.startswith(("gamma", "lambda2_gamma", "nu_gamma")):
                        tag = f"cluster{i + 2}"
                    elif name in ("w", "comp_var"):
                        tag = str(i + 1)
                    else:
                        tag = str(i)
                    out.append((f"{name}[{tag}]", name, (i,)))
            else:
                for j in range(shape[0]):
                    for m in range(shape[1]):
                        tag = drugs[m] if len(drugs) == shape[1] else str(m)
                        out.append((f"{name}[{j + 1}][{tag}]", name, (j, m)))
        return out

    def scalar_series(self, label):
        """(chains, n_retained) array for one scalar label."""
        for lab, name, idx in self.scalar_labels():
            if lab == label:
                arr = self.draws[name]
                return arr[(slice(None), slice(None)) + idx]
        raise KeyError(label)

    @classmethod
    def stack(cls, stores):
        """Concatenate single-chain stores along the chain axis."""
        first = stores[0]
        draws = {name: np.concatenate([s.draws[name] for s in stores], axis=0)
                 for name in first.draws}
        return cls(config=first.config, draws=draws,
                   iterations=first.iterations, labels=first.labels,
                   chain_streams=[cs for s in stores for cs in s.chain_streams],
                   relabel_counts=np.concatenate(
                       [s.relabel_counts for s in stores]),
                   meta=first.meta)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

def _sweep(state, data, rng):
    t1, t2 = update_collapsed_mh(state, data, rng)
    state = dataclasses.replace(state, theta1=t1, theta2=t2)
    latent = impute_censored(state, data, rng)
    state = dataclasses.replace(state, latent=latent)

    t1 = update_linear_day15(state, data, rng)
    t1 = dataclasses.replace(
        t1, hs_beta=update_horseshoe(t1.hs_beta, t1.beta, rng),
        hs_gamma=update_horseshoe(t1.hs_gamma, t1.gamma, rng))
    res1 = latent.z1 - mean_day15_all(data.x, state.mixture.c, t1)
    t1 = dataclasses.replace(t1, sigma2=update_sigma2(res1, rng))
    state = dataclasses.replace(state, theta1=t1)

    t2 = update_linear_day42(state, data, rng)
    t2 = dataclasses.replace(
        t2, hs_beta=update_horseshoe(t2.hs_beta, t2.beta, rng),
        hs_gamma=update_horseshoe(t2.hs_gamma, t2.gamma, rng))
    res2 = latent.z2 - mean_day42_all(latent.z1, data.delta1, data.x,
                                      state.mixture.c, t2)
    t2 = dataclasses.replace(t2, sigma2=update_sigma2(res2, rng))
    state = dataclasses.replace(state, theta2=t2)

    c = update_allocations(state, data, rng)
    state = dataclasses.replace(
        state, mixture=dataclasses.replace(state.mixture, c=c))
    state = dataclasses.replace(
        state, mixture=update_mixture_params(state, data, rng))
    return state


def _store_row(draws, row, state, data):
    t1r, t2r, mixr, changed = relabel_canonical(state.theta1, state.theta2,
                                                state.mixture)
    values = {
        "beta0_1": t1r.beta0, "beta_1": t1r.beta, "gamma_1": t1r.gamma,
        "sigma2_1": t1r.sigma2,
        "tau2_beta_1": t1r.hs_beta.tau2, "xi_beta_1": t1r.hs_beta.xi,
        "lambda2_beta_1": t1r.hs_beta.lambda2, "nu_beta_1": t1r.hs_beta.nu,
        "tau2_gamma_1": t1r.hs_gamma.tau2, "xi_gamma_1": t1r.hs_gamma.xi,
        "lambda2_gamma_1": t1r.hs_gamma.lambda2, "nu_gamma_1": t1r.hs_gamma.nu,
        "beta0_2": t2r.beta0, "rho0": t2r.rho0, "rho": t2r.rho,
        "beta_2": t2r.beta, "gamma_2": t2r.gamma, "sigma2_2": t2r.sigma2,
        "tau2_beta_2": t2r.hs_beta.tau2, "xi_beta_2": t2r.hs_beta.xi,
        "lambda2_beta_2": t2r.hs_beta.lambda2, "nu_beta_2": t2r.hs_beta.nu,
        "tau2_gamma_2": t2r.hs_gamma.tau2, "xi_gamma_2": t2r.hs_gamma.xi,
        "lambda2_gamma_2": t2r.hs_gamma.lambda2, "nu_gamma_2": t2r.hs_gamma.nu,
        "w": mixr.w, "mu": mixr.mu, "comp_var": mixr.comp_var,
        "c": mixr.c,
        "z1_cens": state.latent.z1[data.cens1],
        "z2_cens": state.latent.z2[data.cens2],
    }
    for name, val in values.items():
        draws[name][row] = val
    return changed


def run_chain(config, data_or_records, rng=None, init=None,
              standardize_covariates=True, lc50_standardize=True,
              subtype_levels=None, stream_label="0"):
    """Run one chain; returns a single-chain :class:`SampleStore`.

    ``data_or_records`` may be a list of PatientRecord or a prebuilt
    :class:`ModelData`.  The run is fully deterministic given the rng
    (or ``config.seed`` when no rng is passed).
    """
    data = ModelData.coerce(data_or_records,
                            standardize_covariates=standardize_covariates,
                            lc50_standardize=lc50_standardize,
                            subtype_levels=subtype_levels)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = _copy_state(init) if init is not None else \
        initial_state(data, config.k, rng)

    p = data.x.shape[1]
    k = config.k
    d = data.lc50.shape[1]
    n_keep = config.n_retained
    shapes = _param_shapes(p, k, d, data.cens1.size, data.cens2.size)
    draws = {}
    for name, shp in shapes.items():
        if name == "c":
            draws[name] = np.empty((n_keep, data.n), dtype=np.int16)
        else:
            draws[name] = np.empty((n_keep,) + shp)
    kept_iters = np.empty(n_keep, dtype=int)

    relabels = 0
    row = 0
    for it in range(config.iterations):
        state = _sweep(state, data, rng)
        j = it - config.burn_in
        if j >= 0 and (j + 1) % config.thin == 0:
            relabels += _store_row(draws, row, state, data)
            kept_iters[row] = it + 1
            row += 1
    assert row == n_keep

    labels = {
        "covariates": list(data.design.columns) if data.design is not None
        else [f"x{i}" for i in range(p)],
        "drugs": list(_drug_names(d)),
        "cens1_ids": [data.ids[i] for i in data.cens1],
        "cens2_ids": [data.ids[i] for i in data.cens2],
        "ids": list(data.ids),
    }
    stacked = {name: arr[None, ...] for name, arr in draws.items()}
    return SampleStore(config=config, draws=stacked, iterations=kept_iters,
                       labels=labels, chain_streams=[stream_label],
                       relabel_counts=np.array([relabels]),
                       meta={"lc50_standardized": data.lc50_transforms
                             is not None})


def _drug_names(d):
    from .data import DRUGS
    if d == len(DRUGS):
        return DRUGS
    return tuple(f"dim{m}" for m in range(d))


def fit(records_or_data, config, standardize_covariates=True,
        lc50_standardize=True, subtype_levels=None):
    """Run ``config.chains`` chains from one shared starting state.

    Chains draw from independent child streams of ``config.seed``; the
    result stacks them into a single multi-chain store.
    """
    data = ModelData.coerce(records_or_data,
                            standardize_covariates=standardize_covariates,
                            lc50_standardize=lc50_standardize,
                            subtype_levels=subtype_levels)
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.chains + 1)
    init = initial_state(data, config.k, np.random.default_rng(children[-1]))
    stores = []
    for ci in range(config.chains):
        rng = np.random.default_rng(children[ci])
        stores.append(run_chain(config, data, rng=rng, init=init,
                                stream_label=f"seed={config.seed} "
                                             f"spawn={ci}"))
    return SampleStore.stack(stores)

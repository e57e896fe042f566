"""Model state containers and log-likelihood / log-prior evaluation.

The response at each time point is log10 MRD, left-censored at
``Z_LOW``.  Day-15 means are a linear model in covariates plus cluster
effects; day-42 means regress on the day-15 response through a gate
that opens only when day-15 MRD was detectable:

    mu1_i = beta0_1 + x_i . beta_1 + cdum_i . gamma_1
    mu2_i = beta0_2 + delta1_i * (rho0 + rho * z1_i
                                  + x_i . beta_2 + cdum_i . gamma_2)

``cdum_i`` is the dummy coding of patient i's cluster (cluster 1 is
the reference).  Covariate and cluster-effect coefficients carry
horseshoe priors in four independent blocks; LC50 profiles follow a
finite Gaussian mixture with isotropic components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import Z_LOW
from .numerics import (dirichlet_logpdf, invgamma_logpdf, normal_logcdf,
                       normal_logpdf)

# Prior hyperparameters.
INTERCEPT_PRIOR_VAR = 100.0       # beta0_1, beta0_2 ~ N(0, 10^2)
RHO_PRIOR_VAR = 1.0               # rho0, rho ~ N(0, 1)
SIGMA2_PRIOR_SHAPE = 3.0          # sigma2_t ~ InvGamma(3, 2)
SIGMA2_PRIOR_RATE = 2.0
COMP_VAR_PRIOR_SHAPE = 3.0        # mixture component variances
COMP_VAR_PRIOR_RATE = 2.0
MU_PRIOR_VAR = 1.0                # mixture means ~ N(0, I)

# Numerical range for the horseshoe conditional coefficient variances.
VAR_CLIP_LOW = 1e-18
VAR_CLIP_HIGH = 1e18


@dataclass
class HorseshoeBlock:
    """Scale state for one horseshoe-prior coefficient block.

    Coefficient j has conditional prior N(0, lambda2[j] * tau2); the
    inverse-gamma auxiliaries nu (per coefficient) and xi (global)
    give every scale a conjugate inverse-gamma full conditional.
    """

    tau2: float
    xi: float
    lambda2: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.lambda2 = np.asarray(self.lambda2, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.lambda2.shape != self.nu.shape:
            raise ValueError("lambda2 and nu must have equal length")
        if self.tau2 <= 0 or self.xi <= 0 or np.any(self.lambda2 <= 0) \
                or np.any(self.nu <= 0):
            raise ValueError("horseshoe scales must be positive")

    @classmethod
    def unit(cls, m):
        """Block of size m with every scale initialized to 1."""
        return cls(tau2=1.0, xi=1.0, lambda2=np.ones(m), nu=np.ones(m))

    @property
    def size(self) -> int:
        return self.lambda2.size

    def coefficient_variances(self) -> np.ndarray:
        # The half-Cauchy tails let tau2 * lambda2 under- or overflow in
        # long chains; clip so downstream precisions (1 / variance) stay
        # finite and Cholesky factorizations remain well posed.
        return np.clip(self.tau2 * self.lambda2, VAR_CLIP_LOW, VAR_CLIP_HIGH)


@dataclass
class Day15Params:
    """Day-15 regression state."""

    beta0: float
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    hs_beta: HorseshoeBlock
    hs_gamma: HorseshoeBlock

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.hs_beta.size != self.beta.size:
            raise ValueError("hs_beta size mismatch")
        if self.hs_gamma.size != self.gamma.size:
            raise ValueError("hs_gamma size mismatch")

    @classmethod
    def initial(cls, p, k):
        return cls(beta0=0.0, beta=np.zeros(p), gamma=np.zeros(k - 1),
                   sigma2=1.0, hs_beta=HorseshoeBlock.unit(p),
                   hs_gamma=HorseshoeBlock.unit(k - 1))


@dataclass
class Day42Params:
    """Day-42 regression state (autoregressive, gated on delta1)."""

    beta0: float
    rho0: float
    rho: float
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    hs_beta: HorseshoeBlock
    hs_gamma: HorseshoeBlock

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.hs_beta.size != self.beta.size:
            raise ValueError("hs_beta size mismatch")
        if self.hs_gamma.size != self.gamma.size:
            raise ValueError("hs_gamma size mismatch")

    @classmethod
    def initial(cls, p, k):
        return cls(beta0=0.0, rho0=0.0, rho=0.0, beta=np.zeros(p),
                   gamma=np.zeros(k - 1), sigma2=1.0,
                   hs_beta=HorseshoeBlock.unit(p),
                   hs_gamma=HorseshoeBlock.unit(k - 1))


@dataclass
class MixtureState:
    """Finite Gaussian mixture over LC50 profiles, isotropic components.

    Allocation labels are 1-based (1..k); cluster 1 is the regression
    reference category.
    """

    k: int
    w: np.ndarray
    mu: np.ndarray
    comp_var: np.ndarray
    c: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.comp_var = np.asarray(self.comp_var, dtype=float)
        self.c = np.asarray(self.c, dtype=int)
        if self.w.shape != (self.k,) or self.mu.shape[0] != self.k \
                or self.comp_var.shape != (self.k,):
            raise ValueError("mixture parameter shapes do not match k")
        if not np.isclose(self.w.sum(), 1.0) or np.any(self.w < 0):
            raise ValueError("weights must be a probability vector")
        if np.any(self.comp_var <= 0):
            raise ValueError("component variances must be positive")
        if self.c.size and (self.c.min() < 1 or self.c.max() > self.k):
            raise ValueError("allocations must lie in 1..k")

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    @classmethod
    def initial(cls, k, d, c):
        return cls(k=k, w=np.full(k, 1.0 / k), mu=np.zeros((k, d)),
                   comp_var=np.ones(k), c=np.asarray(c, dtype=int))


@dataclass
class LatentResponses:
    """Complete log10 MRD vectors: observed where detected, imputed
    truncated-normal values where censored."""

    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self):
        self.z1 = np.asarray(self.z1, dtype=float)
        self.z2 = np.asarray(self.z2, dtype=float)
        if self.z1.shape != self.z2.shape:
            raise ValueError("z1 and z2 must have equal length")


def cluster_dummies(c, k):
    """(N, k-1) dummy coding of 1-based allocations; cluster 1 -> zeros."""
    c = np.asarray(c, dtype=int)
    out = np.zeros((c.size, k - 1))
    for j in range(2, k + 1):
        out[c == j, j - 2] = 1.0
    return out


def mean_day15(x, c_dummy, params):
    """Day-15 mean for one patient (x: (p,), c_dummy: (k-1,))."""
    return float(params.beta0 + np.dot(x, params.beta)
                 + np.dot(c_dummy, params.gamma))


def mean_day42(z1, delta1, x, c_dummy, params):
    """Day-42 mean for one patient; the bracket enters only if delta1=1."""
    inner = (params.rho0 + params.rho * z1 + np.dot(x, params.beta)
             + np.dot(c_dummy, params.gamma))
    return float(params.beta0 + delta1 * inner)


def mean_day15_all(x, c, params):
    """Vector of day-15 means for design x (N, p) and allocations c."""
    cd = cluster_dummies(c, params.gamma.size + 1)
    return params.beta0 + x @ params.beta + cd @ params.gamma


def mean_day42_all(z1, delta1, x, c, params):
    """Vector of day-42 means; z1 is the complete day-15 response.

    The gate uses the censoring indicator, so for delta1=0 patients
    the mean is just the intercept regardless of the imputed z1.
    """
    cd = cluster_dummies(c, params.gamma.size + 1)
    inner = (params.rho0 + params.rho * np.asarray(z1, dtype=float)
             + x @ params.beta + cd @ params.gamma)
    return params.beta0 + np.asarray(delta1, dtype=float) * inner


def loglik_uncensored(z, mu, sigma2):
    """Gaussian log density of an observed response (broadcasting)."""
    if np.any(np.asarray(sigma2) <= 0):
        raise ValueError("sigma2 must be positive")
    return normal_logpdf(z, mu, sigma2)


def loglik_censored(mu, sigma2, z_low=Z_LOW):
    """log P(Z <= z_low) for Z ~ N(mu, sigma2); stable in the far tail."""
    if np.any(np.asarray(sigma2) <= 0):
        raise ValueError("sigma2 must be positive")
    return normal_logcdf(z_low, mean=mu, var=sigma2)


def total_loglik(records, design, latent, theta1, theta2, allocations):
    """Observed-data log likelihood of both time points.

    ``latent`` is accepted for signature symmetry with the samplers but
    ignored: imputed values do not enter the observed-data likelihood.
    Censored observations contribute CDF mass at the detection limit.
    For the day-42 terms the mean uses the observed day-15 response,
    which exists whenever the gate is open (delta1 = 1).
    """
    del latent
    c = np.asarray(allocations, dtype=int)
    z1 = np.array([r.z1 if r.z1 is not None else 0.0 for r in records])
    d1 = np.array([r.delta1 for r in records], dtype=float)
    z2 = np.array([r.z2 if r.z2 is not None else 0.0 for r in records])
    d2 = np.array([r.delta2 for r in records], dtype=float)

    mu1 = mean_day15_all(design.x, c, theta1)
    mu2 = mean_day42_all(z1, d1, design.x, c, theta2)

    total = 0.0
    for mu, z, d, s2 in ((mu1, z1, d1, theta1.sigma2),
                         (mu2, z2, d2, theta2.sigma2)):
        obs = d == 1.0
        total += loglik_uncensored(z[obs], mu[obs], s2).sum()
        total += loglik_censored(mu[~obs], s2).sum()
    return float(total)


def mixture_loglik(y, state):
    """Log marginal density of LC50 rows under the mixture.

    ``y`` may be a single profile (d,) or a matrix (N, d); returns a
    scalar total over rows.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = state.d
    sq = ((y[:, None, :] - state.mu[None, :, :]) ** 2).sum(axis=2)
    logcomp = (np.log(state.w)[None, :]
               - 0.5 * d * (np.log(2.0 * np.pi * state.comp_var))[None, :]
               - 0.5 * sq / state.comp_var[None, :])
    return float(logsumexp(logcomp, axis=1).sum())


def _horseshoe_logpdf(block, coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    out = normal_logpdf(coeffs, 0.0, block.coefficient_variances()).sum()
    out += invgamma_logpdf(block.lambda2, 0.5, 1.0 / block.nu).sum()
    out += invgamma_logpdf(block.nu, 0.5, 1.0).sum()
    out += invgamma_logpdf(block.tau2, 0.5, 1.0 / block.xi)
    out += invgamma_logpdf(block.xi, 0.5, 1.0)
    return float(out)


def log_prior(theta1, theta2, mixture):
    """Joint log prior over both regressions and the mixture parameters.

    Includes the horseshoe hierarchy (coefficients given scales, plus
    all scale and auxiliary densities), N(0, 10^2) intercepts,
    N(0, 1) autoregression terms, inverse-gamma variances, Dirichlet
    weights and standard-normal component means.  Allocation labels
    carry no density term here; they are part of the likelihood
    factorization handled by the samplers.
    """
    out = normal_logpdf(theta1.beta0, 0.0, INTERCEPT_PRIOR_VAR)
    out += normal_logpdf(theta2.beta0, 0.0, INTERCEPT_PRIOR_VAR)
    out += normal_logpdf(theta2.rho0, 0.0, RHO_PRIOR_VAR)
    out += normal_logpdf(theta2.rho, 0.0, RHO_PRIOR_VAR)
    out += invgamma_logpdf(theta1.sigma2, SIGMA2_PRIOR_SHAPE,
                           SIGMA2_PRIOR_RATE)
    out += invgamma_logpdf(theta2.sigma2, SIGMA2_PRIOR_SHAPE,
                           SIGMA2_PRIOR_RATE)
    out += _horseshoe_logpdf_sum(theta1, theta2)
    k = mixture.k
    out += dirichlet_logpdf(mixture.w, np.full(k, 1.0 / k))
    out += normal_logpdf(mixture.mu, 0.0, MU_PRIOR_VAR).sum()
    out += invgamma_logpdf(mixture.comp_var, COMP_VAR_PRIOR_SHAPE,
                           COMP_VAR_PRIOR_RATE).sum()
    return float(out)


def _horseshoe_logpdf_sum(theta1, theta2):
    return (_horseshoe_logpdf(theta1.hs_beta, theta1.beta)
            + _horseshoe_logpdf(theta1.hs_gamma, theta1.gamma)
            + _horseshoe_logpdf(theta2.hs_beta, theta2.beta)
            + _horseshoe_logpdf(theta2.hs_gamma, theta2.gamma))

"""Numerical building blocks shared by the model and the samplers.

Everything here is deliberately small and heavily exercised by tests:
stable Gaussian log-densities, a left-tail-safe normal log-CDF, draws
from a left-truncated normal that never exceed the bound, and the
inverse-gamma / Dirichlet helpers used by the conjugate updates.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr, ndtri

LOG_2PI = float(np.log(2.0 * np.pi))

# Standardized bound below which Phi underflows and the inverse-CDF
# sampler degenerates; switch to tail rejection there.
_TAIL_CUTOFF = -35.0


def normal_logpdf(x, mean, var):
    """Log density of N(mean, var) evaluated at x (broadcasting)."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def normal_logcdf(x, mean=0.0, var=1.0):
    """log P(X <= x) for X ~ N(mean, var).

    Uses the dedicated log-CDF so the value stays finite far into the
    left tail (a direct log(Phi(x)) underflows to -inf past x ~ -38).
    """
    sd = np.sqrt(var)
    return log_ndtr((np.asarray(x, dtype=float) - mean) / sd)


def _std_tail_draw(rng, a):
    """One draw of T ~ N(0,1) conditioned on T >= a, for large a > 0.

    Exponential-proposal rejection (Robert 1995); accept probability is
    bounded away from zero uniformly in a.
    """
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    while True:
        y = a + rng.exponential(1.0 / lam)
        if rng.random() <= np.exp(-0.5 * (y - lam) ** 2):
            return y


def trunc_normal_left(rng, mean, sd, upper):
    """Draws from N(mean, sd^2) conditioned on X <= upper.

    Parameters broadcast against each other; the result has the
    broadcast shape.  The bulk uses lower-tail inverse-CDF inversion
    (u * Phi(alpha) keeps full relative precision because it never
    involves 1 - small); standardized bounds below -35 fall back to a
    rejection sampler on the mirrored upper tail.  Returned values
    never exceed ``upper``.
    """
    mean, sd, upper = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(sd, dtype=float),
        np.asarray(upper, dtype=float))
    alpha = (upper - mean) / sd
    # u in (0, 1]: avoids ndtri(0) = -inf; u = 1 lands exactly on the bound.
    u = 1.0 - rng.random(size=alpha.shape)
    z = ndtri(u * ndtr(alpha))
    extreme = alpha < _TAIL_CUTOFF
    if np.any(extreme):
        flat = z.reshape(-1)
        a_flat = alpha.reshape(-1)
        for i in np.nonzero(extreme.reshape(-1))[0]:
            flat[i] = -_std_tail_draw(rng, -a_flat[i])
        z = flat.reshape(alpha.shape)
    z = np.minimum(z, alpha)
    return mean + sd * z


def invgamma_draw(rng, shape, rate, size=None):
    """Draws from InvGamma(shape, rate): density ~ x^-(shape+1) exp(-rate/x).

    If G ~ Gamma(shape, scale=1) then rate / G has the target law.
    """
    return rate / rng.gamma(shape, 1.0, size=size)


def invgamma_logpdf(x, shape, rate):
    """Log density of InvGamma(shape, rate) at x (broadcasting)."""
    x = np.asarray(x, dtype=float)
    return (shape * np.log(rate) - gammaln(shape)
            - (shape + 1.0) * np.log(x) - rate / x)


def dirichlet_logpdf(w, alpha):
    """Log density of Dirichlet(alpha) at w."""
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum()
                 + ((alpha - 1.0) * np.log(w)).sum())


def half_cauchy_draw(rng, scale=1.0, size=None):
    """Draws from the half-Cauchy distribution with the given scale."""
    return scale * np.abs(rng.standard_cauchy(size=size))

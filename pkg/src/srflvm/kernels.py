"""Generic MCMC transition kernels shared across the samplers.

Two kernels live here: the elliptical slice sampler for targets of the
form (zero-mean Gaussian prior) x (arbitrary likelihood), and a bounded
univariate slice sampler with shrinkage from the full interval.
"""

import numpy as np

from .exceptions import NumericalError

_MAX_SHRINK = 100


def elliptical_slice_step(current, prior_cov_chol, log_lik, rng):
    """One elliptical slice sampling transition.

    Parameters
    ----------
    current : array, shape (D,)
        Current state; the prior is N(0, C) with C = L L'.
    prior_cov_chol : array, shape (D, D), or None
        Lower Cholesky factor of the prior covariance. None means identity.
    log_lik : callable
        Maps a candidate vector to its log likelihood.
    rng : numpy.random.Generator

    Returns
    -------
    (x_new, loglik_new) : the accepted point and its log likelihood.

    The kernel always moves: theta = 0 has probability zero, and the
    shrinking bracket keeps the current point attainable only in the
    limit, so a pathological likelihood raises instead of stalling.
    """
    current = np.asarray(current, dtype=float)
    nu = rng.standard_normal(current.shape)
    if prior_cov_chol is not None:
        chol = np.asarray(prior_cov_chol, dtype=float)
        nu = chol * nu if chol.ndim == 1 else chol @ nu

    ll_current = log_lik(current)
    if not np.isfinite(ll_current):
        raise NumericalError("elliptical slice: log likelihood not finite at current state")
    log_y = ll_current + np.log(rng.uniform())

    theta = rng.uniform(0.0, 2.0 * np.pi)
    theta_min, theta_max = theta - 2.0 * np.pi, theta

    for _ in range(_MAX_SHRINK):
        proposal = current * np.cos(theta) + nu * np.sin(theta)
        ll_prop = log_lik(proposal)
        if ll_prop > log_y:
            return proposal, ll_prop
        if theta < 0.0:
            theta_min = theta
        else:
            theta_max = theta
        theta = rng.uniform(theta_min, theta_max)
        if theta_max - theta_min < 1e-14:
            break
    raise NumericalError("elliptical slice: bracket collapsed without acceptance")


def slice_sample_univariate(log_density, lower, upper, init, rng, n_steps=1):
    """Slice sampling on a bounded interval with full-interval shrinkage.

    Each transition draws a level under the density at the current point,
    then samples uniformly from (lower, upper), shrinking the bracket
    toward the current point until a value above the level is found.

    Returns the state after ``n_steps`` transitions.
    """
    if not lower < upper:
        raise ValueError("need lower < upper")
    x = float(init)
    ll = log_density(x)
    if not np.isfinite(ll):
        raise NumericalError("univariate slice: log density not finite at init")
    for _ in range(n_steps):
        log_y = ll + np.log(rng.uniform())
        lo, hi = lower, upper
        for _ in range(_MAX_SHRINK):
            cand = rng.uniform(lo, hi)
            ll_cand = log_density(cand)
            if ll_cand > log_y:
                x, ll = cand, ll_cand
                break
            if cand < x:
                lo = cand
            else:
                hi = cand
        else:
            raise NumericalError("univariate slice: no acceptance after max shrink steps")
    return x

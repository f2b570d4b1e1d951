"""Indian-buffet-process machinery for the sparse latent dimensions.

The sampler works in the stick-breaking representation: instantiated
dimensions carry explicit decreasing weights pi_d, a uniform slice
variable bounds how far the representation must extend, indicator entries
are Gibbs-sampled with a correction for flips that change the minimum
active weight, and inactive columns are pruned once per sweep.
"""

import numpy as np

from .exceptions import NumericalError
from .kernels import slice_sample_univariate

_MAX_NEW_DIMS = 10000


def ibp_prior_draw(n, alpha, rng):
    """Draw a binary matrix from the sequential buffet process.

    Customer i takes existing dish d with probability n_d / i, then
    samples Poisson(alpha / i) new dishes.
    """
    if n < 1 or alpha <= 0:
        raise ValueError("need n >= 1 and alpha > 0")
    cols = []  # one int array of row indices per dish
    counts = []
    for i in range(1, n + 1):
        for d in range(len(cols)):
            if rng.uniform() < counts[d] / i:
                cols[d].append(i - 1)
                counts[d] += 1
        for _ in range(rng.poisson(alpha / i)):
            cols.append([i - 1])
            counts.append(1)
    z = np.zeros((n, len(cols)), dtype=bool)
    for d, rows in enumerate(cols):
        z[rows, d] = True
    return z


def pi_star(pi, n_d):
    """min(1, smallest weight among active dimensions); 1 if none active."""
    active = n_d > 0
    if not np.any(active):
        return 1.0
    return min(1.0, float(pi[active].min()))


def draw_slice(pi, n_d, rng):
    """Uniform slice variable on (0, pi*)."""
    return rng.uniform(0.0, pi_star(pi, n_d))


def sample_sparsity_indicators(Z, pi, row_loglik_factory, rng, row_done=None):
    """Gibbs-sample every indicator entry from its full conditional.

    ``row_loglik_factory(i)`` returns a callable mapping a candidate
    indicator row for observation i to the row's log likelihood (any
    additive constant is fine; only differences are used).  The odds of
    z_id = 1 are pi_d L1 / ((1 - pi_d) L0), each side divided by the
    minimum active weight its configuration implies, which differs only
    when the flip changes the active set at the smallest weight.
    ``row_done(i)`` fires after row i's entries are final, so callers can
    push the new row into their feature caches.

    Columns are visited left to right, which is decreasing-weight order
    under the sorted-pi state invariant.  The visit order must be a fixed
    function of the weights; ordering by current activity status makes
    the scan non-invariant.

    Z is modified in place and returned.
    """
    n, d_plus = Z.shape
    if d_plus == 0:
        return Z
    n_d = Z.sum(axis=0).astype(int)
    for i in range(n):
        sample_z_row(Z, pi, i, n_d, row_loglik_factory(i), rng)
        if row_done is not None:
            row_done(i)
    return Z


def sample_z_row(Z, pi, i, n_d, eval_row, rng, eval_rows=None):
    """Gibbs-sample one row of indicators in place (see
    sample_sparsity_indicators); ``n_d`` holds the current column counts
    and is updated alongside.  Returns True if any entry changed.

    ``eval_rows`` optionally evaluates a whole matrix of candidate
    indicator rows at once.  Candidates are then precomputed assuming no
    flips and re-batched after each accepted flip, which leaves the
    sampled distribution (and the draw sequence) unchanged while turning
    most of the scan into one batched evaluation.
    """
    d_plus = Z.shape[1]
    changed = False
    log_pi = np.log(pi)
    log_1mpi = np.log1p(-pi)

    if eval_rows is not None:
        ll_cur = None
        d = 0
        while d < d_plus:
            block = np.repeat(Z[i][None, :], d_plus - d + (ll_cur is None), axis=0)
            offset = 0
            if ll_cur is None:
                offset = 1  # first row of the block is the unmodified state
            for t in range(d_plus - d):
                block[offset + t, d + t] = ~block[offset + t, d + t]
            lls = eval_rows(block)
            if ll_cur is None:
                ll_cur = float(lls[0])
            rebatch = False
            for t in range(d_plus - d):
                dd = d + t
                flip, ll_cur = _flip_entry(Z, pi, i, n_d, dd, ll_cur,
                                           float(lls[offset + t]),
                                           log_pi, log_1mpi, rng)
                if flip:
                    changed = True
                    d = dd + 1
                    rebatch = True
                    break
            if not rebatch:
                break
        return changed

    ll_cur = eval_row(Z[i])
    for d in range(d_plus):
        cand = Z[i].copy()
        cand[d] = not Z[i, d]
        flip, ll_cur = _flip_entry(Z, pi, i, n_d, d, ll_cur, eval_row(cand),
                                   log_pi, log_1mpi, rng)
        changed = changed or flip
    return changed


def _flip_entry(Z, pi, i, n_d, d, ll_cur, ll_cand, log_pi, log_1mpi, rng):
    """Sample one indicator entry given the current and flipped row
    likelihoods; returns (flipped, new current log likelihood)."""
    z_cur = bool(Z[i, d])
    ll_one, ll_zero = (ll_cur, ll_cand) if z_cur else (ll_cand, ll_cur)
    if np.isnan(ll_one) or np.isnan(ll_zero) or (
        ll_one == -np.inf and ll_zero == -np.inf
    ):
        raise NumericalError(f"non-finite row likelihood at entry ({i}, {d})")

    base = n_d[d] - int(z_cur)
    n_d[d] = base + 1
    star_one = pi_star(pi, n_d)
    n_d[d] = base
    star_zero = pi_star(pi, n_d)

    log_odds = (log_pi[d] - np.log(star_one) + ll_one) - \
               (log_1mpi[d] - np.log(star_zero) + ll_zero)
    z_new = bool(np.log(rng.uniform()) < -np.logaddexp(0.0, -log_odds))
    Z[i, d] = z_new
    n_d[d] = base + int(z_new)
    return z_new != z_cur, (ll_one if z_new else ll_zero)


def resample_active_weights(Z, rng):
    """Conjugate update of the stick weights for all-active columns.

    Returns (pi, order): fresh Beta(n_d, 1 + N - n_d) draws sorted
    decreasing, plus the column permutation the caller must apply to
    every other D-indexed array.
    """
    n, d_plus = Z.shape
    n_d = Z.sum(axis=0)
    if np.any(n_d == 0):
        raise ValueError("inactive column present; prune before resampling weights")
    pi = rng.beta(n_d, 1.0 + n - n_d)
    order = np.argsort(-pi, kind="stable")
    return pi[order], order


def draw_new_stick(prev, alpha, n, rng, n_steps=30):
    """One draw of the next (smaller) stick weight on (0, prev).

    The target density on the weight x is
        exp(alpha * sum_i (1 - x)^i / i) * x^(alpha - 1) * (1 - x)^n.
    Slice sampling runs on u = (x / prev)^alpha, whose density is bounded
    on (0, 1) with the x^(alpha-1) factor absorbed by the transform.
    """
    inv_i = 1.0 / np.arange(1, n + 1)
    powers = np.arange(1, n + 1)
    inv_alpha = 1.0 / alpha

    def log_density(u):
        x = prev * u ** inv_alpha
        one_minus = 1.0 - x
        if one_minus <= 0.0:
            return -np.inf
        return alpha * np.sum(inv_i * one_minus ** powers) + n * np.log(one_minus)

    u = slice_sample_univariate(log_density, 0.0, 1.0, rng.uniform(), rng, n_steps=n_steps)
    return prev * u ** inv_alpha


def stick_tail(s, alpha, n, rng):
    """Weights of the inactive dimensions above the slice level.

    The inactive weights form a point process independent of the active
    ones, so the decreasing chain starts from 1 (not from the smallest
    active weight) and runs until a draw falls below the slice.  Returned
    in decreasing order.
    """
    sticks = []
    prev = 1.0
    while prev > s:
        x = draw_new_stick(prev, alpha, n, rng)
        if x <= s:
            break
        sticks.append(x)
        prev = x
        if len(sticks) > _MAX_NEW_DIMS:
            raise NumericalError("stick extension failed to terminate")
    return sticks


def sample_ibp_concentration(d_plus, n, alpha0, beta0, rng):
    """Conjugate Gamma update of the buffet concentration given the
    number of active dimensions."""
    if d_plus < 0 or n < 1:
        raise ValueError("need d_plus >= 0 and n >= 1")
    harmonic = np.sum(1.0 / np.arange(1, n + 1))
    return rng.gamma(alpha0 + d_plus, 1.0 / (beta0 + harmonic))

"""Likelihood evaluation and weight updates for all observation families.

Count families keep their regression weights instantiated and use simple
pointwise densities.  The gaussian family integrates weights and noise
out of every training likelihood (conjugate scaled normal-inverse-gamma),
so its evaluations go through ``CollapsedGaussian``, which maintains the
per-column posterior sufficient statistics and serves fast leave-one-row-
out predictive evaluations for the row-wise samplers.
"""

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from .exceptions import NumericalError
from .kernels import elliptical_slice_step
from .polya_gamma import pg_draw_batch


def pointwise_loglik(y, psi, family, sigma2=None, nb_r=None):
    """Entrywise log p(y | psi) for the factorizing families.

    psi is the linear predictor; sigma2 (gaussian) and nb_r (negative
    binomial) supply the extra parameters.  Multinomial rows do not
    factorize over columns; use ``multinomial_row_loglik``.
    """
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if family == "gaussian":
        return -0.5 * np.log(2.0 * np.pi * sigma2) - (y - psi) ** 2 / (2.0 * sigma2)
    if family == "bernoulli":
        return y * psi - np.logaddexp(0.0, psi)
    if family == "poisson":
        return y * psi - np.exp(psi) - gammaln(y + 1.0)
    if family == "nb":
        r = nb_r
        return (gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
                + y * psi - (y + r) * np.logaddexp(0.0, psi))
    if family == "multinomial":
        raise ValueError("multinomial likelihood is evaluated at row level")
    raise ValueError(f"unknown family {family!r}")


def multinomial_row_loglik(y_row, psi_row, mask_row):
    """Observed-entry token log likelihood of one row under the softmax
    over all columns (the multinomial coefficient is constant and dropped)."""
    lse = logsumexp(psi_row)
    return float(np.sum(y_row[mask_row] * (psi_row[mask_row] - lse)))


def multinomial_log_xi(psi):
    """xi_ij = log sum_{j' != j} exp(psi_ij'), computed per column."""
    n, j_total = psi.shape
    xi = np.empty_like(psi)
    for j in range(j_total):
        others = np.delete(psi, j, axis=1)
        xi[:, j] = logsumexp(others, axis=1)
    return xi


# ---------------------------------------------------------------------------
# Collapsed gaussian columns.
# ---------------------------------------------------------------------------

def gaussian_collapsed_loglik(phi, y, mask, hp):
    """Log marginal likelihood of one column's observed entries with the
    regression weights and noise variance integrated out.

    The weights have prior N(beta0, sigma^2 B0) and the noise precision a
    Gamma(a0, b0) prior, so the marginal is a multivariate Student-t with
    2 a0 degrees of freedom, location phi beta0 and scale
    (b0 / a0)(phi B0 phi' + I); it is evaluated through the equivalent
    evidence identities in O(n m^2).
    """
    phi = np.atleast_2d(phi)
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    beta0, b0_diag = hp.beta_prior_width(phi.shape[1])
    if np.any(b0_diag <= 0):
        raise NumericalError("weight prior covariance must be positive definite")
    phi_obs = phi[mask]
    y_obs = y[mask]
    n = y_obs.size
    if n == 0:
        return 0.0
    r = y_obs - phi_obs @ beta0
    a_mat = np.diag(1.0 / b0_diag) + phi_obs.T @ phi_obs
    g = phi_obs.T @ r
    chol = np.linalg.cholesky(a_mat)
    half = np.linalg.solve(chol, g)
    quad = r @ r - half @ half
    a_post = hp.a0 + 0.5 * n
    b_post = hp.b0 + 0.5 * quad
    logdet_prior = -np.sum(np.log(b0_diag))
    logdet_post = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(
        -0.5 * n * np.log(2.0 * np.pi)
        + 0.5 * (logdet_prior - logdet_post)
        + hp.a0 * np.log(hp.b0) - a_post * np.log(b_post)
        + gammaln(a_post) - gammaln(hp.a0)
    )


class CollapsedGaussian:
    """Per-column collapsed posterior statistics for the gaussian family.

    Maintains, for every column j restricted to its observed rows, the
    regularized Gram matrix A_j, its inverse, the feature/residual inner
    products and the residual sum of squares.  Row commits apply rank-one
    updates; a full inverse refresh once per sampling phase keeps drift
    in check.
    """

    def __init__(self, Y, mask, hp):
        self.Y = np.asarray(Y, dtype=float)
        self.mask = np.asarray(mask, dtype=bool)
        self.hp = hp
        m = hp.n_features
        self.beta0, b0_diag = hp.beta_prior(m)
        self.b0_inv = 1.0 / b0_diag
        self.logdet_prior = -np.sum(np.log(b0_diag))
        self.n_obs = self.mask.sum(axis=0).astype(float)
        self.phi = None

    def set_features(self, phi):
        """Full rebuild of all per-column statistics from the feature matrix."""
        self.phi = np.array(phi, dtype=float)
        offset = self.phi @ self.beta0
        self.resid = np.where(self.mask, self.Y - offset[:, None], 0.0)
        masked = self.mask.T[:, :, None] * self.phi[None, :, :]   # (J, N, m)
        self.A = self.phi.T[None, :, :] @ masked
        self.A += np.diag(self.b0_inv)[None, :, :]
        self.g = self.resid.T @ self.phi
        self.rss = np.sum(self.resid ** 2, axis=0)
        self.refresh_inverse()

    def refresh_inverse(self):
        self.A_inv = np.linalg.inv(self.A)

    def column_logliks(self, A=None, g=None, rss=None):
        """Evidence of every column's observed entries."""
        A = self.A if A is None else A
        g = self.g if g is None else g
        rss = self.rss if rss is None else rss
        hp = self.hp
        chol = np.linalg.cholesky(A)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        half = np.empty_like(g)
        for j in range(g.shape[0]):
            half[j] = solve_triangular(chol[j], g[j], lower=True, check_finite=False)
        quad = rss - np.sum(half ** 2, axis=1)
        a_post = hp.a0 + 0.5 * self.n_obs
        b_post = hp.b0 + 0.5 * quad
        if np.any(b_post <= 0):
            raise NumericalError("collapsed gaussian produced nonpositive scale")
        return (
            -0.5 * self.n_obs * np.log(2.0 * np.pi)
            + 0.5 * (self.logdet_prior - logdet)
            + hp.a0 * np.log(hp.b0) - a_post * np.log(b_post)
            + gammaln(a_post) - gammaln(hp.a0)
        )

    def total_loglik(self):
        return float(np.sum(self.column_logliks()))

    def row_context(self, i):
        """Leave-row-i-out predictive evaluator over row i's observed columns.

        Returns a callable mapping a candidate feature row to
        sum_j log p(y_ij | other rows of column j, candidate features).
        """
        cols = np.where(self.mask[i])[0]
        if cols.size == 0:
            return lambda phi_row: 0.0
        hp = self.hp
        k = cols.size
        m = self.phi.shape[1]
        phi_i = self.phi[i]
        y_i = self.Y[i, cols]
        r_i = self.resid[i, cols]
        a_inv = np.ascontiguousarray(self.A_inv[cols])  # (k, m, m)
        a_inv_flat = a_inv.reshape(k * m, m)
        g_out = self.g[cols] - phi_i[None, :] * r_i[:, None]
        u = (a_inv_flat @ phi_i).reshape(k, m)           # A^-1 phi_i
        t1 = np.matmul(a_inv, g_out[:, :, None])[:, :, 0]  # A^-1 g_out
        d = u @ phi_i
        denom = 1.0 - d
        if np.any(denom <= 1e-12):
            raise NumericalError("leave-one-out downdate lost positive definiteness")
        coef = t1 + u * (np.sum(u * g_out, axis=1) / denom)[:, None]
        rss_out = self.rss[cols] - r_i ** 2
        quad_out = rss_out - np.sum(g_out * coef, axis=1)
        a_post = hp.a0 + 0.5 * (self.n_obs[cols] - 1.0)
        b_post = hp.b0 + 0.5 * quad_out
        if np.any(b_post <= 0):
            raise NumericalError("leave-one-out scale went nonpositive")
        dof = 2.0 * a_post
        lognorm = gammaln(0.5 * (dof + 1.0)) - gammaln(0.5 * dof) - 0.5 * np.log(dof * np.pi)
        lognorm_total = float(np.sum(lognorm))
        beta0 = self.beta0
        inv_denom = 1.0 / denom
        scale_base = b_post / a_post
        half_dofp1 = 0.5 * (dof + 1.0)
        inv_dof = 1.0 / dof

        def evaluate_batch(phi_rows):
            """Log predictive of row i under each candidate feature row;
            phi_rows has one candidate per row."""
            c = phi_rows.shape[0]
            phi_t = np.ascontiguousarray(phi_rows.T)
            v = (a_inv_flat @ phi_t).reshape(k, m, c)
            loc = (phi_rows @ beta0)[None, :] + coef @ phi_t           # (k, c)
            qf = np.sum(v * phi_t[None, :, :], axis=1) \
                + (u @ phi_t) ** 2 * inv_denom[:, None]
            scale2 = scale_base[:, None] * (1.0 + qf)
            resid2 = (y_i[:, None] - loc) ** 2
            lls = -0.5 * np.log(scale2) \
                - half_dofp1[:, None] * np.log1p(resid2 * inv_dof[:, None] / scale2)
            return lls.sum(axis=0) + lognorm_total

        def evaluate(phi_row):
            v = (a_inv_flat @ phi_row).reshape(k, m)
            loc = phi_row @ beta0 + coef @ phi_row
            qf = v @ phi_row + (u @ phi_row) ** 2 * inv_denom
            scale2 = scale_base * (1.0 + qf)
            resid2 = (y_i - loc) ** 2
            return lognorm_total + float(np.sum(
                -0.5 * np.log(scale2)
                - half_dofp1 * np.log1p(resid2 * inv_dof / scale2)
            ))

        evaluate.batch = evaluate_batch
        return evaluate

    def commit_row(self, i, phi_row):
        """Replace row i's features and update the affected columns.

        Only the inverses are maintained during row phases; the raw Gram
        matrices are rebuilt at the next ``set_features`` call, which
        also bounds Sherman-Morrison drift to one sweep.
        """
        cols = np.where(self.mask[i])[0]
        phi_old = self.phi[i].copy()
        self.phi[i] = phi_row
        if cols.size == 0:
            return
        k = cols.size
        m = phi_row.size
        r_old = self.resid[i, cols]
        r_new = self.Y[i, cols] - phi_row @ self.beta0
        self.resid[i, cols] = r_new
        self.g[cols] += np.outer(r_new, phi_row) - np.outer(r_old, phi_old)
        self.rss[cols] += r_new ** 2 - r_old ** 2
        a_inv = np.ascontiguousarray(self.A_inv[cols])
        flat = a_inv.reshape(k * m, m)
        u = (flat @ phi_old).reshape(k, m)
        denom = 1.0 - u @ phi_old
        if np.any(np.abs(denom) <= 1e-12):
            raise NumericalError("rank-one downdate lost positive definiteness")
        buf = u[:, :, None] * (u / denom[:, None])[:, None, :]
        a_inv += buf
        v = (flat @ phi_row).reshape(k, m)
        denom2 = 1.0 + v @ phi_row
        np.multiply(v[:, :, None], (v / denom2[:, None])[:, None, :], out=buf)
        a_inv -= buf
        self.A_inv[cols] = a_inv

    def propose_feature_cols(self, col_idx, new_cols):
        """Column log likelihoods if feature columns ``col_idx`` became
        ``new_cols``; returns (logliks, payload) without committing.

        Requires the Gram matrices to be current, i.e. call only after
        ``set_features`` or a previous ``commit_feature_cols`` (row
        commits deliberately leave A stale; only the inverse tracks them).
        """
        col_idx = np.asarray(col_idx)
        phi_new = self.phi.copy()
        phi_new[:, col_idx] = new_cols
        offset = phi_new @ self.beta0
        resid = np.where(self.mask, self.Y - offset[:, None], 0.0)
        masked_new = self.mask.T[:, :, None] * new_cols[None, :, :]      # (J, N, 2)
        cross = np.swapaxes(masked_new, 1, 2) @ phi_new                  # (J, 2, m)
        a_new = self.A.copy()
        a_new[:, col_idx, :] = cross
        a_new[:, :, col_idx] = np.swapaxes(cross, 1, 2)
        a_new[:, col_idx, col_idx] += self.b0_inv[col_idx]
        g_new = resid.T @ phi_new
        rss_new = np.sum(resid ** 2, axis=0)
        lls = self.column_logliks(A=a_new, g=g_new, rss=rss_new)
        return lls, (phi_new, a_new, g_new, rss_new, resid)

    def commit_feature_cols(self, payload):
        # the frequency phase never reads A_inv, so defer the refresh
        self.phi, self.A, self.g, self.rss, self.resid = payload


# ---------------------------------------------------------------------------
# Weight updates.
# ---------------------------------------------------------------------------

def _draw_beta_gaussian_system(phi_obs, omega, rhs_vec, b0_inv, b0_inv_beta0, rng):
    """Draw from N(V (phi' rhs + B0^-1 beta0), V), V = (phi' Om phi + B0^-1)^-1."""
    prec = (phi_obs * omega[:, None]).T @ phi_obs + np.diag(b0_inv)
    rhs = phi_obs.T @ rhs_vec + b0_inv_beta0
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as err:
        raise NumericalError("singular weight posterior; check the weight prior") from err
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    return mean + np.linalg.solve(chol.T, rng.standard_normal(rhs.size))


def update_weights_pg(state, dataset, j, phi, rng, hp):
    """Polya-Gamma augmented weight draw for one column.

    Draws the augmentation at the observed entries, then the weight
    column from its conditional Gaussian.  Multinomial columns subtract
    the competing-column log-sum ``xi`` from the linear predictor, add
    the matching omega * xi term to the mean equation, and skip the fixed
    reference column entirely.  Returns (omega over all rows, beta_j);
    omega is zero at unobserved entries.
    """
    family = dataset.likelihood
    n = dataset.n_rows
    obs = dataset.mask[:, j]
    y = dataset.Y[obs, j]
    phi_obs = phi[obs]
    mean0, var0 = hp.beta_prior_width(phi.shape[1])
    b0_inv = 1.0 / var0
    b0_inv_beta0 = b0_inv * mean0

    omega_full = np.zeros(n)
    if family == "bernoulli":
        psi = phi_obs @ state.beta[j]
        b = np.ones(y.size)
        tau = y - 0.5
        omega = pg_draw_batch(b, psi, rng) if y.size else np.zeros(0)
        beta_j = _draw_beta_gaussian_system(phi_obs, omega, tau, b0_inv, b0_inv_beta0, rng)
    elif family == "nb":
        psi = phi_obs @ state.beta[j]
        r = state.nb_r[j]
        b = y + r
        tau = (y - r) / 2.0
        omega = pg_draw_batch(b, psi, rng) if y.size else np.zeros(0)
        beta_j = _draw_beta_gaussian_system(phi_obs, omega, tau, b0_inv, b0_inv_beta0, rng)
    elif family == "multinomial":
        if j == dataset.n_cols - 1:
            return omega_full, state.beta[j].copy()
        totals = dataset.row_totals[obs]
        keep = totals > 0
        y = y[keep]
        phi_obs = phi_obs[keep]
        psi_all = phi[obs][keep] @ state.beta.T
        others = np.delete(psi_all, j, axis=1)
        xi = logsumexp(others, axis=1)
        psi_eff = psi_all[:, j] - xi
        b = totals[keep].astype(float)
        tau = y - b / 2.0
        omega = pg_draw_batch(b, psi_eff, rng) if y.size else np.zeros(0)
        beta_j = _draw_beta_gaussian_system(
            phi_obs, omega, tau + omega * xi, b0_inv, b0_inv_beta0, rng
        )
        obs_idx = np.where(obs)[0][keep]
        omega_full[obs_idx] = omega
        return omega_full, beta_j
    else:
        raise ValueError(f"family {family!r} has no Polya-Gamma update")
    omega_full[obs] = omega
    return omega_full, beta_j


def crt_draw(y, r, rng):
    """Chinese-restaurant-table count for y customers at concentration r.

    Exact below a size cutoff; astronomically large counts (possible only
    under extreme prior draws) use a normal approximation of the sum of
    the independent seating indicators.
    """
    y = int(y)
    if y <= 0:
        return 0
    if y > 10**6:
        from scipy.special import polygamma, psi
        mean = r * (psi(r + y) - psi(r))
        var = mean + r * r * (polygamma(1, r + y) - polygamma(1, r))
        draw = rng.normal(mean, np.sqrt(max(var, 1e-12)))
        return int(np.clip(round(draw), 1, y))
    probs = r / (r + np.arange(y))
    return int(np.sum(rng.uniform(size=y) < probs))


def update_nb_dispersion(state, dataset, j, phi, rng, hp):
    """Augmented conjugate update of one column's dispersion."""
    obs = dataset.mask[:, j]
    y = dataset.Y[obs, j]
    psi = phi[obs] @ state.beta[j]
    r = state.nb_r[j]
    tables = sum(crt_draw(v, r, rng) for v in y)
    # log(1 - p) with p = logistic(psi)
    log_1mp = -np.logaddexp(0.0, psi)
    rate = hp.f0 - np.sum(log_1mp)
    return rng.gamma(hp.e0 + tables, 1.0 / rate)


def update_weights_poisson(state, dataset, j, phi, rng, hp):
    """One elliptical-slice transition of a column's weights against the
    Poisson likelihood of its observed entries."""
    obs = dataset.mask[:, j]
    y = dataset.Y[obs, j]
    phi_obs = phi[obs]
    mean0, var0 = hp.beta_prior_width(phi.shape[1])
    chol_diag = np.sqrt(var0)

    def log_lik(delta):
        psi = phi_obs @ (mean0 + delta)
        return float(np.sum(pointwise_loglik(y, psi, "poisson")))

    delta, _ = elliptical_slice_step(state.beta[j] - mean0, chol_diag, log_lik, rng)
    return mean0 + delta


def update_gaussian_theta(state, dataset, j, phi, rng, hp):
    """Conjugate draw of one gaussian column's (weights, noise variance)
    given the features; used when instantiated values are needed."""
    obs = dataset.mask[:, j]
    y = dataset.Y[obs, j]
    phi_obs = phi[obs]
    mean0, var0 = hp.beta_prior_width(phi.shape[1])
    n = y.size
    r = y - phi_obs @ mean0
    a_mat = np.diag(1.0 / var0) + phi_obs.T @ phi_obs
    g = phi_obs.T @ r
    chol = np.linalg.cholesky(a_mat)
    half = np.linalg.solve(chol, g)
    quad = r @ r - half @ half
    a_post = hp.a0 + 0.5 * n
    b_post = hp.b0 + 0.5 * quad
    sigma2 = 1.0 / rng.gamma(a_post, 1.0 / b_post)
    mean_post = mean0 + np.linalg.solve(chol.T, half)
    beta_j = mean_post + np.sqrt(sigma2) * np.linalg.solve(chol.T, rng.standard_normal(mean0.size))
    return beta_j, float(sigma2)

"""Dirichlet-process mixture kernel learning over the random frequencies.

Each frequency w_m belongs to a Gaussian cluster with a conjugate
normal-inverse-Wishart base measure.  Assignments are Gibbs-sampled with
the cluster locations integrated out (the collapsed multivariate-t
predictive), locations are then re-instantiated from their conjugate
posterior, and the concentration gets the usual beta-augmented update.
"""

import numpy as np
from scipy.special import gammaln
from scipy.stats import invwishart

from .exceptions import NumericalError


def student_t_logpdf(w, mu, sigma, dof):
    """Log density of the multivariate Student-t at w.

    ``sigma`` is the scale matrix (not the covariance) and must be
    symmetric positive definite; ``dof`` > 0.
    """
    if dof <= 0:
        raise ValueError("dof must be positive")
    w = np.asarray(w, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    d = w.size
    if d == 0:
        return 0.0
    sigma = np.atleast_2d(sigma)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as err:
        raise NumericalError("student-t scale matrix not positive definite") from err
    u = np.linalg.solve(chol, w - mu)
    quad = u @ u
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return float(
        gammaln((dof + d) / 2.0) - gammaln(dof / 2.0)
        - 0.5 * d * np.log(dof * np.pi) - 0.5 * logdet
        - 0.5 * (dof + d) * np.log1p(quad / dof)
    )


def niw_prior_draw(hp, d, rng):
    """One (mean, covariance) draw from the NIW prior in d dimensions."""
    if d == 0:
        return np.zeros(0), np.zeros((0, 0))
    sigma = invwishart.rvs(df=hp.niw_nu0(d), scale=hp.niw_psi0(d), random_state=rng)
    sigma = np.atleast_2d(sigma)
    chol = np.linalg.cholesky(sigma)
    mu = hp.niw_mu0(d) + chol @ rng.standard_normal(d) / np.sqrt(hp.lambda0)
    return mu, sigma


def extend_cluster_dims(cluster_mu, cluster_sigma, hp, rng):
    """Append one prior-drawn coordinate to every cluster's (mu, Sigma).

    The new coordinate's variance comes from the one-dimensional marginal
    of the inverse-Wishart prior (which is exactly the projective marginal
    under the dimension-dependent degrees of freedom), with zero cross
    terms; the full conditional posterior re-draw later in the sweep
    replaces these values before they matter.
    """
    k, d = cluster_mu.shape
    var_new = 1.0 / rng.gamma((1.0 + hp.niw_extra_dof) / 2.0,
                              2.0 / hp.psi0_scale, size=k)
    mu_new = hp.niw_loc + np.sqrt(var_new / hp.lambda0) * rng.standard_normal(k)
    mu = np.concatenate([cluster_mu, mu_new[:, None]], axis=1)
    sigma = np.zeros((k, d + 1, d + 1))
    sigma[:, :d, :d] = cluster_sigma
    sigma[:, d, d] = var_new
    return mu, sigma


class ClusterSummaries:
    """Incrementally maintained per-cluster sufficient statistics.

    Stores member counts, coordinate sums and outer-product sums; the
    conjugate posterior and its Student-t predictive are derived on
    demand.  Removing then re-adding a member restores the sums exactly.
    """

    def __init__(self, d):
        self.d = d
        self.n = []
        self.sum_w = []
        self.sum_outer = []

    @classmethod
    def from_assignments(cls, W, zeta, n_clusters=None):
        d = W.shape[1]
        k = int(zeta.max()) + 1 if n_clusters is None else n_clusters
        summ = cls(d)
        for i in range(k):
            members = W[zeta == i]
            summ.n.append(len(members))
            summ.sum_w.append(members.sum(axis=0) if len(members) else np.zeros(d))
            summ.sum_outer.append(members.T @ members if len(members) else np.zeros((d, d)))
        return summ

    @property
    def n_clusters(self):
        return len(self.n)

    def add(self, k, w):
        self.n[k] += 1
        self.sum_w[k] = self.sum_w[k] + w
        self.sum_outer[k] = self.sum_outer[k] + np.outer(w, w)

    def remove(self, k, w):
        self.n[k] -= 1
        self.sum_w[k] = self.sum_w[k] - w
        self.sum_outer[k] = self.sum_outer[k] - np.outer(w, w)

    def add_new(self, w):
        self.n.append(1)
        self.sum_w.append(w.copy())
        self.sum_outer.append(np.outer(w, w))
        return len(self.n) - 1

    def drop_cluster(self, k):
        del self.n[k], self.sum_w[k], self.sum_outer[k]

    def posterior_params(self, k, hp):
        """NIW posterior (mu', lambda', nu', psi') for cluster k."""
        return self._posterior(self.n[k], self.sum_w[k], self.sum_outer[k], hp)

    def _posterior(self, n, sum_w, sum_outer, hp):
        d = self.d
        mu0 = hp.niw_mu0(d)
        if n == 0:
            return mu0, hp.lambda0, hp.niw_nu0(d), hp.niw_psi0(d)
        wbar = sum_w / n
        scatter = sum_outer - n * np.outer(wbar, wbar)
        lam = hp.lambda0 + n
        nu = hp.niw_nu0(d) + n
        mu = (hp.lambda0 * mu0 + n * wbar) / lam
        diff = wbar - mu0
        psi = hp.niw_psi0(d) + scatter + (hp.lambda0 * n / lam) * np.outer(diff, diff)
        psi = 0.5 * (psi + psi.T)
        return mu, lam, nu, psi

    def predictive_logpdf(self, k, w, hp):
        """Collapsed Student-t predictive density of w under cluster k."""
        mu, lam, nu, psi = self.posterior_params(k, hp)
        return _niw_predictive_logpdf(w, mu, lam, nu, psi, self.d)

    def prior_predictive_logpdf(self, w, hp):
        d = self.d
        return _niw_predictive_logpdf(
            w, hp.niw_mu0(d), hp.lambda0, hp.niw_nu0(d), hp.niw_psi0(d), d
        )


def _niw_predictive_logpdf(w, mu, lam, nu, psi, d):
    dof = nu - d + 1.0
    scale = psi * (lam + 1.0) / (lam * dof)
    return student_t_logpdf(w, mu, scale, dof)


def assign_clusters(W, zeta, dp_eta, hp, rng):
    """Resample every frequency's cluster label by collapsed Gibbs.

    Existing clusters weight as (count excluding m) times their posterior
    predictive at w_m; a fresh cluster weights as the concentration times
    the prior predictive.  Empty clusters are removed on the fly, and the
    returned labels are compact (0..K-1).
    """
    m_total = W.shape[0]
    zeta = zeta.copy()
    summ = ClusterSummaries.from_assignments(W, zeta)
    for m in range(m_total):
        w = W[m]
        k_old = zeta[m]
        summ.remove(k_old, w)
        if summ.n[k_old] == 0:
            summ.drop_cluster(k_old)
            zeta[zeta > k_old] -= 1
            zeta[m] = -1
        k = summ.n_clusters
        logw = np.empty(k + 1)
        for i in range(k):
            logw[i] = np.log(summ.n[i]) + summ.predictive_logpdf(i, w, hp)
        logw[k] = np.log(dp_eta) + summ.prior_predictive_logpdf(w, hp)
        logw -= logw.max()
        prob = np.exp(logw)
        prob /= prob.sum()
        choice = rng.choice(k + 1, p=prob)
        if choice == k:
            summ.add_new(w)
        else:
            summ.add(choice, w)
        zeta[m] = choice
    return zeta


def resample_locations(W, zeta, hp, rng):
    """Instantiate every occupied cluster's (mean, covariance) from the
    conjugate NIW posterior given its members."""
    d = W.shape[1]
    k_total = int(zeta.max()) + 1
    summ = ClusterSummaries.from_assignments(W, zeta, n_clusters=k_total)
    mus = np.zeros((k_total, d))
    sigmas = np.zeros((k_total, d, d))
    for k in range(k_total):
        mu_post, lam, nu, psi = summ.posterior_params(k, hp)
        if d == 0:
            continue
        sigma = np.atleast_2d(invwishart.rvs(df=nu, scale=psi, random_state=rng))
        chol = np.linalg.cholesky(sigma)
        mus[k] = mu_post + chol @ rng.standard_normal(d) / np.sqrt(lam)
        sigmas[k] = sigma
    return mus, sigmas


def propose_frequency(state, m, delta_loglik_fn, rng):
    """Metropolis step for one frequency with its cluster prior as proposal.

    ``delta_loglik_fn(m, w_prop)`` must return the data log-likelihood
    change from replacing w_m; the prior terms cancel exactly, so the
    acceptance probability is min(1, likelihood ratio).
    Returns (accepted, proposal).
    """
    k = state.zeta[m]
    sigma = state.cluster_sigma[k]
    try:
        chol = np.linalg.cholesky(sigma) if sigma.shape[0] else sigma
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"cluster {k} covariance not positive definite") from err
    w_prop = state.cluster_mu[k] + (chol @ rng.standard_normal(sigma.shape[0])
                                    if sigma.shape[0] else np.zeros(0))
    delta = delta_loglik_fn(m, w_prop)
    accepted = np.log(rng.uniform()) < delta
    return accepted, w_prop


def sample_dp_concentration(eta, k_plus, m, a_eta, b_eta, rng):
    """Beta-augmented conjugate update of the mixture concentration."""
    if k_plus < 1 or m < 1:
        raise ValueError("need at least one cluster and one frequency")
    rho = rng.beta(eta + 1.0, m)
    rate = b_eta - np.log(rho)
    odds = (a_eta + k_plus - 1.0) / (m * rate)
    pi_rho = odds / (1.0 + odds)
    if rng.uniform() < pi_rho:
        return rng.gamma(a_eta + k_plus, 1.0 / rate)
    return rng.gamma(a_eta + k_plus - 1.0, 1.0 / rate)

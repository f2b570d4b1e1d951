"""Sparse infinite linear-Gaussian factor model baseline.

Shares the buffet-process machinery and the elliptical slice kernel with
the random-feature model, but maps masked latents straight through a
loading matrix: y_i ~ N((x_i * z_i) L, sigma^2 I).  Loadings and the
shared noise variance have conjugate updates.
"""

from dataclasses import dataclass

import numpy as np

from . import ibp
from .exceptions import DataValidationError
from .kernels import elliptical_slice_step
from .model import ChainRecord
from .rng import RngStream


@dataclass
class LinearState:
    X: np.ndarray        # (N, D)
    Z: np.ndarray        # (N, D) boolean
    pi: np.ndarray       # (D,)
    loadings: np.ndarray  # (D, J)
    sigma2: float
    ibp_alpha: float

    kind = "linear"

    @property
    def d_plus(self):
        return self.X.shape[1]

    @property
    def masked_latents(self):
        return self.X * self.Z

    def copy(self):
        return LinearState(self.X.copy(), self.Z.copy(), self.pi.copy(),
                           self.loadings.copy(), self.sigma2, self.ibp_alpha)


def init_linear_state(dataset, hp, seed, d_init=2):
    from .rng import as_generator
    rng = as_generator(seed)
    n, j = dataset.Y.shape
    alpha = rng.gamma(hp.alpha0, 1.0 / hp.beta0)
    return LinearState(
        X=rng.standard_normal((n, d_init)),
        Z=np.ones((n, d_init), dtype=bool),
        pi=np.sort(np.cumprod(rng.beta(alpha, 1.0, size=d_init)))[::-1].copy(),
        loadings=np.sqrt(hp.loading_var) * rng.standard_normal((d_init, j)),
        sigma2=1.0 / rng.gamma(hp.a0, 1.0 / hp.b0),
        ibp_alpha=alpha,
    )


def _row_loglik(state, dataset, i, v_row):
    obs = dataset.mask[i]
    if not obs.any():
        return 0.0
    mean = v_row @ state.loadings[:, obs]
    resid = dataset.Y[i, obs] - mean
    return float(-0.5 * np.sum(resid ** 2) / state.sigma2
                 - 0.5 * obs.sum() * np.log(2.0 * np.pi * state.sigma2))


def linear_sweep(state, dataset, hp, rng):
    """One Gibbs sweep of the linear baseline. Returns a new state."""
    state = state.copy()
    n, j_total = dataset.Y.shape

    # latent rows
    if state.d_plus:
        for i in range(n):
            z_i = state.Z[i]

            def log_lik(x_row):
                return _row_loglik(state, dataset, i, x_row * z_i)

            state.X[i], _ = elliptical_slice_step(state.X[i], None, log_lik, rng)

    # slice, extension, indicator pass (weight-sorted scan order)
    s = rng.uniform(0.0, ibp.pi_star(state.pi, state.Z.sum(axis=0)))
    sticks = ibp.stick_tail(s, state.ibp_alpha, n, rng)
    for stick in sticks:
        state.X = np.column_stack([state.X, rng.standard_normal(n)])
        state.Z = np.column_stack([state.Z, np.zeros(n, dtype=bool)])
        state.pi = np.append(state.pi, stick)
        state.loadings = np.vstack([
            state.loadings,
            np.sqrt(hp.loading_var) * rng.standard_normal((1, j_total)),
        ])
    if sticks:
        order = np.argsort(-state.pi, kind="stable")
        state.X, state.Z = state.X[:, order], state.Z[:, order]
        state.pi, state.loadings = state.pi[order], state.loadings[order]

    def factory(i):
        x_i = state.X[i]

        def eval_for_z(z_row):
            return _row_loglik(state, dataset, i, x_i * z_row)

        return eval_for_z

    ibp.sample_sparsity_indicators(state.Z, state.pi, factory, rng)

    # prune, weight update, concentration
    keep = state.Z.sum(axis=0) > 0
    if not keep.all():
        state.X, state.Z = state.X[:, keep], state.Z[:, keep]
        state.pi, state.loadings = state.pi[keep], state.loadings[keep]
    if state.d_plus:
        state.pi, order = ibp.resample_active_weights(state.Z, rng)
        state.X, state.Z = state.X[:, order], state.Z[:, order]
        state.loadings = state.loadings[order]
    state.ibp_alpha = ibp.sample_ibp_concentration(
        state.d_plus, n, hp.alpha0, hp.beta0, rng
    )

    # conjugate loadings per column, then shared noise variance
    v = state.masked_latents
    d = state.d_plus
    if d:
        prior_prec = np.eye(d) / hp.loading_var
        for j in range(j_total):
            obs = dataset.mask[:, j]
            v_obs = v[obs]
            prec = prior_prec + v_obs.T @ v_obs / state.sigma2
            chol = np.linalg.cholesky(prec)
            rhs = v_obs.T @ dataset.Y[obs, j] / state.sigma2
            mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            state.loadings[:, j] = mean + np.linalg.solve(chol.T, rng.standard_normal(d))
    resid = np.where(dataset.mask, dataset.Y - v @ state.loadings, 0.0)
    n_obs = dataset.mask.sum()
    state.sigma2 = 1.0 / rng.gamma(hp.a0 + 0.5 * n_obs,
                                   1.0 / (hp.b0 + 0.5 * np.sum(resid ** 2)))
    return state


def linear_train_loglik(state, dataset):
    psi = state.masked_latents @ state.loadings
    ll = -0.5 * np.log(2.0 * np.pi * state.sigma2) \
         - (dataset.Y - psi) ** 2 / (2.0 * state.sigma2)
    return float(np.sum(ll[dataset.mask]))


def run_linear_chain(dataset, hp, iters=100, burnin=None, thin=1, seed=0, d_init=2):
    """Chain runner for the linear baseline; gaussian data only."""
    if dataset.likelihood != "gaussian":
        raise DataValidationError("the linear factor baseline requires gaussian data")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if burnin is None:
        burnin = iters // 2
    stream = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    state = init_linear_state(dataset, hp, stream.child("init"), d_init=d_init)
    rng = stream.child("sweeps").generator()
    records = []
    for it in range(iters):
        state = linear_sweep(state, dataset, hp, rng)
        snapshot = None
        if it >= burnin and (it - burnin) % thin == 0:
            snapshot = state.copy()
        records.append(ChainRecord(
            iteration=it,
            d_plus=state.d_plus,
            k_plus=0,
            train_loglik=linear_train_loglik(state, dataset),
            snapshot=snapshot,
        ))
    return records

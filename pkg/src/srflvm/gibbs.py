"""Full Gibbs sweeps and chain orchestration.

One sweep updates, in order: the latent rows (elliptical slice), the
sparsity indicators under a fresh slice variable (with the dimension
representation extended past the slice first, so newly born columns get
their indicators sampled in the same pass), pruning and the stick-weight
update, the buffet concentration, the frequency Metropolis proposals, the
frequency clustering and its locations and concentration, and finally the
family-specific weight updates.  The gaussian family keeps its weights
and noise integrated out during training; instantiated draws are attached
to snapshots only.
"""

import numpy as np
from scipy.stats import norm

from . import ibp
from .dpmix import (assign_clusters, extend_cluster_dims, niw_prior_draw,
                    propose_frequency, resample_locations,
                    sample_dp_concentration)
from .features import feature_map, feature_row
from .kernels import elliptical_slice_step
from .likelihoods import (CollapsedGaussian, multinomial_row_loglik,
                          pointwise_loglik, update_gaussian_theta,
                          update_nb_dispersion, update_weights_pg,
                          update_weights_poisson)
from .model import (ChainRecord, init_state, permute_columns, prune_inactive,
                    validate_state)
from .rng import RngStream


# ---------------------------------------------------------------------------
# Family-specific likelihood plumbing for the sweep.
# ---------------------------------------------------------------------------

class _GaussianOps:
    """Sweep-facing likelihood operations with weights integrated out."""

    def __init__(self, dataset, hp):
        self.dataset = dataset
        self.hp = hp
        self.engine = CollapsedGaussian(dataset.Y, dataset.mask, hp)

    def begin_sweep(self, state):
        self.engine.set_features(feature_map(state.masked_latents, state.W))

    def row_loglik_factory(self, state, i):
        ctx = self.engine.row_context(i)
        w = state.W
        x_row = state.X[i]  # live view; reflects the elliptical-slice update
        batch = getattr(ctx, "batch", None)

        def eval_for_z(z_row):
            return ctx(feature_row(x_row * z_row, w))

        if batch is not None:
            def eval_rows_for_z(z_block):
                return batch(feature_map(x_row * z_block, w))

            eval_for_z.batch = eval_rows_for_z
        return ctx, eval_for_z

    def commit_row(self, state, i):
        phi_row = feature_row(state.X[i] * state.Z[i], state.W)
        self.engine.commit_row(i, phi_row)

    def begin_w_phase(self, state):
        self._current_total = self.engine.total_loglik()

    def w_delta(self, state, m, w_prop):
        proj = state.masked_latents @ w_prop
        scale = 1.0 / np.sqrt(state.W.shape[0])
        new_cols = np.column_stack([np.sin(proj), np.cos(proj)]) * scale
        lls, payload = self.engine.propose_feature_cols((2 * m, 2 * m + 1), new_cols)
        total = float(np.sum(lls))
        return total - self._current_total, (payload, total)

    def w_commit(self, payload):
        cols_payload, total = payload
        self.engine.commit_feature_cols(cols_payload)
        self._current_total = total

    def update_theta(self, state, rng):
        return  # training is fully collapsed

    def total_loglik(self, state):
        return self.engine.total_loglik()

    def attach_snapshot_params(self, snapshot, rng):
        phi = self.engine.phi
        beta = np.empty_like(snapshot.beta)
        sigma2 = np.empty(self.dataset.n_cols)
        for j in range(self.dataset.n_cols):
            beta[j], sigma2[j] = update_gaussian_theta(
                snapshot, self.dataset, j, phi, rng, self.hp
            )
        snapshot.beta = beta
        snapshot.sigma2 = sigma2


class _CountOps:
    """Sweep-facing likelihood operations with instantiated weights."""

    def __init__(self, dataset, hp):
        self.dataset = dataset
        self.hp = hp
        self.phi = None

    def begin_sweep(self, state):
        self.phi = feature_map(state.masked_latents, state.W)

    def _row_loglik(self, i, psi_row):
        ds = self.dataset
        if ds.likelihood == "multinomial":
            return multinomial_row_loglik(ds.Y[i], psi_row, ds.mask[i])
        obs = ds.mask[i]
        if not obs.any():
            return 0.0
        nb_r = self._nb_r[obs] if self._nb_r is not None else None
        return float(np.sum(pointwise_loglik(
            ds.Y[i, obs], psi_row[obs], ds.likelihood, nb_r=nb_r,
        )))

    def row_loglik_factory(self, state, i):
        self._nb_r = state.nb_r
        beta = state.beta
        w = state.W
        x_row = state.X[i]  # live view; reflects the elliptical-slice update
        ds = self.dataset

        def eval_phi(phi_row):
            return self._row_loglik(i, beta @ phi_row)

        def eval_for_z(z_row):
            return eval_phi(feature_row(x_row * z_row, w))

        def eval_rows_for_z(z_block):
            psi = feature_map(x_row * z_block, w) @ beta.T   # (c, J)
            if ds.likelihood == "multinomial":
                return np.array([
                    multinomial_row_loglik(ds.Y[i], psi_c, ds.mask[i])
                    for psi_c in psi
                ])
            obs = ds.mask[i]
            if not obs.any():
                return np.zeros(psi.shape[0])
            nb_r = state.nb_r[obs] if state.nb_r is not None else None
            lls = pointwise_loglik(ds.Y[i, obs][None, :], psi[:, obs],
                                   ds.likelihood, nb_r=nb_r)
            return lls.sum(axis=1)

        eval_for_z.batch = eval_rows_for_z
        return eval_phi, eval_for_z

    def commit_row(self, state, i):
        self.phi[i] = feature_row(state.X[i] * state.Z[i], state.W)

    def _masked_total(self, state, phi):
        ds = self.dataset
        psi = phi @ state.beta.T
        if ds.likelihood == "multinomial":
            return float(sum(
                multinomial_row_loglik(ds.Y[i], psi[i], ds.mask[i])
                for i in range(ds.n_rows)
            ))
        lls = pointwise_loglik(
            ds.Y, psi, ds.likelihood,
            nb_r=None if state.nb_r is None else state.nb_r[None, :],
        )
        return float(np.sum(lls[ds.mask]))

    def begin_w_phase(self, state):
        self._current_total = self._masked_total(state, self.phi)

    def w_delta(self, state, m, w_prop):
        proj = state.masked_latents @ w_prop
        scale = 1.0 / np.sqrt(state.W.shape[0])
        phi_new = self.phi.copy()
        phi_new[:, 2 * m] = np.sin(proj) * scale
        phi_new[:, 2 * m + 1] = np.cos(proj) * scale
        total = self._masked_total(state, phi_new)
        return total - self._current_total, (phi_new, total)

    def w_commit(self, payload):
        self.phi, self._current_total = payload

    def update_theta(self, state, rng):
        ds, hp = self.dataset, self.hp
        if ds.likelihood in ("bernoulli", "nb"):
            for j in range(ds.n_cols):
                _, state.beta[j] = update_weights_pg(state, ds, j, self.phi, rng, hp)
                if ds.likelihood == "nb":
                    state.nb_r[j] = update_nb_dispersion(state, ds, j, self.phi, rng, hp)
        elif ds.likelihood == "poisson":
            for j in range(ds.n_cols):
                state.beta[j] = update_weights_poisson(state, ds, j, self.phi, rng, hp)
        elif ds.likelihood == "multinomial":
            for j in range(ds.n_cols - 1):
                _, state.beta[j] = update_weights_pg(state, ds, j, self.phi, rng, hp)
            state.beta[-1] = 0.0

    def total_loglik(self, state):
        return self._masked_total(state, self.phi)

    def attach_snapshot_params(self, snapshot, rng):
        return  # weights are already instantiated


def make_ops(dataset, hp):
    if dataset.likelihood == "gaussian":
        return _GaussianOps(dataset, hp)
    return _CountOps(dataset, hp)


# ---------------------------------------------------------------------------
# The sweep.
# ---------------------------------------------------------------------------

def _extend_dimensions(state, s, hp, rng, n_rows):
    """Instantiate the inactive dimensions whose stick weights exceed the
    slice, merging them into the weight-sorted column order.

    New columns get prior-drawn latent coordinates and frequencies, zero
    indicators (activation happens in the indicator pass that follows),
    and every cluster's location gains a prior-drawn coordinate.
    """
    sticks = ibp.stick_tail(s, state.ibp_alpha, n_rows, rng)
    for stick in sticks:
        d = state.d_plus
        state.X = np.column_stack([state.X, rng.standard_normal(n_rows)])
        state.Z = np.column_stack([state.Z, np.zeros(n_rows, dtype=bool)])
        state.pi = np.append(state.pi, stick)
        state.cluster_mu, state.cluster_sigma = extend_cluster_dims(
            state.cluster_mu, state.cluster_sigma, hp, rng
        )
        mu_new = state.cluster_mu[state.zeta, d]
        sd_new = np.sqrt(state.cluster_sigma[state.zeta, d, d])
        state.W = np.column_stack([state.W, mu_new + sd_new * rng.standard_normal(state.W.shape[0])])
    if sticks:
        order = np.argsort(-state.pi, kind="stable")
        if not np.array_equal(order, np.arange(order.size)):
            permuted = permute_columns(state, order)
            state.X, state.Z, state.pi, state.W = permuted.X, permuted.Z, permuted.pi, permuted.W
            state.cluster_mu = permuted.cluster_mu
            state.cluster_sigma = permuted.cluster_sigma
    return len(sticks)


def extend_dimensions(state, s, hp, rng, n_rows=None):
    """Public wrapper returning a new state with the extension applied."""
    out = state.copy()
    _extend_dimensions(out, s, hp, rng, state.X.shape[0] if n_rows is None else n_rows)
    return out


def gibbs_sweep(state, dataset, hp, rng, ops=None, validate=False,
                n_slice_passes=3, _swap_stick_beta=False):
    """One full sweep over every conditional. Returns a new state.

    The slice-extension-indicator block runs ``n_slice_passes`` times
    (marginalizing the unused representation between passes), because a
    single pass instantiates new dimensions too rarely for the chain to
    explore the dimension count within a short run; the latent rows get
    their elliptical slice update on the first pass only.

    The input state is never mutated, so a raised error leaves the
    caller's state unchanged.
    """
    state = state.copy()
    n, j_total = dataset.Y.shape
    if ops is None:
        ops = make_ops(dataset, hp)
    ops.begin_sweep(state)

    # (1) conjugate stick-weight update for the (all-active) columns, so
    # the indicator scans below always see weights conditioned on the
    # current counts rather than on a stale draw
    if state.d_plus > 0:
        if _swap_stick_beta:
            n_d = state.Z.sum(axis=0)
            pi_new = np.clip(rng.beta(1.0 + n - n_d, n_d), 1e-12, 1 - 1e-12)
            order = np.argsort(-pi_new, kind="stable")
            pi_sorted = pi_new[order]
        else:
            pi_sorted, order = ibp.resample_active_weights(state.Z, rng)
        state = permute_columns(state, order)
        state.pi = pi_sorted

    # (2, 3) slice variable, dimension extension past it, then a per-row
    # pass sharing one leave-row-out context per row: elliptical slice
    # update of the latent row followed by the indicator scan
    for rep in range(max(n_slice_passes, 1)):
        if rep > 0:
            state = prune_inactive(state)
        n_d = state.Z.sum(axis=0)
        s = rng.uniform(0.0, ibp.pi_star(state.pi, n_d))
        _extend_dimensions(state, s, hp, rng, n)
        if state.d_plus == 0:
            continue
        n_d = state.Z.sum(axis=0).astype(int)
        for i in range(n):
            eval_phi, eval_for_z = ops.row_loglik_factory(state, i)
            if rep == 0:
                z_i = state.Z[i]
                w = state.W

                def log_lik(x_row):
                    return eval_phi(feature_row(x_row * z_i, w))

                state.X[i], _ = elliptical_slice_step(state.X[i], None, log_lik, rng)
            flipped = ibp.sample_z_row(state.Z, state.pi, i, n_d, eval_for_z, rng,
                                       eval_rows=getattr(eval_for_z, "batch", None))
            if rep == 0 or flipped:
                ops.commit_row(state, i)

    # (4) prune columns left inactive by the scans
    state = prune_inactive(state)

    # (5) buffet concentration given the active dimension count
    state.ibp_alpha = ibp.sample_ibp_concentration(
        state.d_plus, n, hp.alpha0, hp.beta0, rng
    )

    # (6) frequency Metropolis proposals from their cluster priors
    ops.begin_sweep(state)  # feature caches follow the pruned, permuted state
    ops.begin_w_phase(state)
    for m in range(state.W.shape[0]):
        payload_cell = {}

        def delta_fn(m_idx, w_prop):
            delta, payload = ops.w_delta(state, m_idx, w_prop)
            payload_cell["payload"] = payload
            return delta

        accepted, w_prop = propose_frequency(state, m, delta_fn, rng)
        if accepted:
            state.W[m] = w_prop
            ops.w_commit(payload_cell["payload"])

    # (7) frequency clustering, locations, concentration
    state.zeta = assign_clusters(state.W, state.zeta, state.dp_eta, hp, rng)
    state.cluster_mu, state.cluster_sigma = resample_locations(state.W, state.zeta, hp, rng)
    state.dp_eta = sample_dp_concentration(
        state.dp_eta, state.k_plus, state.W.shape[0], hp.a_eta, hp.b_eta, rng
    )

    # (8) family-specific weight updates
    ops.update_theta(state, rng)

    if validate:
        validate_state(state, dataset, require_active=True)
    return state


def train_loglik(state, dataset, hp, ops=None):
    """Log likelihood of the observed entries under the current state."""
    if ops is None:
        ops = make_ops(dataset, hp)
        ops.begin_sweep(state)
    return ops.total_loglik(state)


def run_chain(dataset, hp, iters=100, burnin=None, thin=1, seed=0,
              d_init=2, validate=False, keep_snapshots=True):
    """Run a full chain and record per-iteration diagnostics.

    Snapshots are kept for post-burn-in iterations at the thinning stride;
    gaussian snapshots get instantiated weight and noise draws attached so
    scoring needs no further sampling.  Deterministic given the seed.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if burnin is None:
        burnin = iters // 2
    stream = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    state = init_state(dataset, hp, stream.child("init"), d_init=d_init)
    rng = stream.child("sweeps").generator()
    ops = make_ops(dataset, hp)
    records = []
    for it in range(iters):
        state = gibbs_sweep(state, dataset, hp, rng, ops=ops, validate=validate)
        snapshot = None
        if keep_snapshots and it >= burnin and (it - burnin) % thin == 0:
            snapshot = state.copy()
            ops.attach_snapshot_params(snapshot, stream.child("snap", it).generator())
        records.append(ChainRecord(
            iteration=it,
            d_plus=state.d_plus,
            k_plus=state.k_plus,
            train_loglik=ops.total_loglik(state),
            snapshot=snapshot,
        ))
    return records


# ---------------------------------------------------------------------------
# Joint-distribution correctness check.
# ---------------------------------------------------------------------------

GEWEKE_STATS = ("d_plus", "mean_pi", "alpha", "eta", "mean_x_sq", "train_loglik")


def _prior_state_draw(n, j_total, hp, family, rng):
    """Draw every latent quantity from the generative prior."""
    from .model import ModelState

    alpha = rng.gamma(hp.alpha0, 1.0 / hp.beta0)
    eta = rng.gamma(hp.a_eta, 1.0 / hp.b_eta)
    Z = ibp.ibp_prior_draw(n, alpha, rng)
    d = Z.shape[1]
    n_d = Z.sum(axis=0)
    pi = rng.beta(n_d, 1.0 + n - n_d) if d else np.zeros(0)
    order = np.argsort(-pi, kind="stable")
    pi, Z = pi[order], Z[:, order]
    X = rng.standard_normal((n, d))
    m = hp.n_features
    zeta = np.zeros(m, dtype=int)
    n_clusters = 0
    for i in range(m):  # sequential restaurant assignment
        probs = np.zeros(n_clusters + 1)
        for k in range(n_clusters):
            probs[k] = np.sum(zeta[:i] == k)
        probs[n_clusters] = eta
        probs /= probs.sum()
        zeta[i] = rng.choice(n_clusters + 1, p=probs)
        n_clusters = max(n_clusters, zeta[i] + 1)
    cluster_mu = np.zeros((n_clusters, d))
    cluster_sigma = np.zeros((n_clusters, d, d))
    W = np.zeros((m, d))
    for k in range(n_clusters):
        cluster_mu[k], cluster_sigma[k] = niw_prior_draw(hp, d, rng)
        members = np.where(zeta == k)[0]
        if d:
            chol = np.linalg.cholesky(cluster_sigma[k])
            W[members] = cluster_mu[k] + rng.standard_normal((members.size, d)) @ chol.T
    mean0, var0 = hp.beta_prior()
    sigma2 = None
    nb_r = None
    if family == "gaussian":
        sigma2 = 1.0 / rng.gamma(hp.a0, 1.0 / hp.b0, size=j_total)
        beta = mean0 + np.sqrt(var0 * sigma2[:, None]) * rng.standard_normal((j_total, mean0.size))
    else:
        beta = mean0 + np.sqrt(var0) * rng.standard_normal((j_total, mean0.size))
    if family == "nb":
        nb_r = rng.gamma(hp.e0, 1.0 / hp.f0, size=j_total)
    if family == "multinomial":
        beta[-1] = 0.0
    return ModelState(X=X, Z=Z, pi=pi, W=W, zeta=zeta, cluster_mu=cluster_mu,
                      cluster_sigma=cluster_sigma, beta=beta, ibp_alpha=alpha,
                      dp_eta=eta, sigma2=sigma2, nb_r=nb_r)


def _draw_data(state, family, rng, row_totals=None):
    phi = feature_map(state.masked_latents, state.W)
    psi = phi @ state.beta.T
    if family == "gaussian":
        return psi + np.sqrt(state.sigma2)[None, :] * rng.standard_normal(psi.shape)
    if family == "bernoulli":
        return (rng.uniform(size=psi.shape) < 1.0 / (1.0 + np.exp(-psi))).astype(float)
    if family == "poisson":
        return rng.poisson(np.exp(np.clip(psi, -30, 30))).astype(float)
    if family == "nb":
        p = 1.0 / (1.0 + np.exp(-np.clip(psi, -20, 20)))
        return rng.negative_binomial(state.nb_r[None, :].repeat(psi.shape[0], 0), 1.0 - p).astype(float)
    if family == "multinomial":
        probs = np.exp(psi - psi.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        out = np.array([rng.multinomial(int(t), pr) for t, pr in zip(row_totals, probs)])
        return out.astype(float)
    raise ValueError(family)


def _stats_of(state, dataset, hp):
    d = state.d_plus
    return np.array([
        d,
        state.pi.mean() if d else 0.0,
        state.ibp_alpha,
        state.dp_eta,
        float(np.mean(state.X ** 2)) if d else 0.0,
        train_loglik(state, dataset, hp),
    ])


def geweke_check(hp, n=4, j_total=2, family="gaussian", iters=4000,
                 seed=0, mutate=None, row_total=5, max_d_plus=100):
    """Compare forward joint simulation against successive-conditional
    simulation on scalar statistics; returns per-statistic two-sided
    p-values from a mean z-test with autocorrelation-aware errors.

    ``max_d_plus`` aborts the successive chain if the dimension count
    diverges; a correct sampler at these sizes stays near its prior mean,
    so the guard only fires for deliberately broken updates, whose
    partial statistics are still reported (and decisively fail).
    """
    from .model import make_dataset

    if iters < 1:
        raise ValueError("geweke check needs iters >= 1")
    stream = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    rng_f = stream.child("forward").generator()
    rng_s = stream.child("successive").generator()
    row_totals = np.full(n, row_total) if family == "multinomial" else None

    forward = np.empty((iters, len(GEWEKE_STATS)))
    for t in range(iters):
        state = _prior_state_draw(n, j_total, hp, family, rng_f)
        y = _draw_data(state, family, rng_f, row_totals)
        dataset = make_dataset(y, family)
        forward[t] = _stats_of(state, dataset, hp)

    successive = np.empty((iters, len(GEWEKE_STATS)))
    state = _prior_state_draw(n, j_total, hp, family, rng_s)
    swap = mutate == "swap-stick-beta"
    n_done = 0
    for t in range(iters):
        y = _draw_data(state, family, rng_s, row_totals)
        dataset = make_dataset(y, family)
        successive[t] = _stats_of(state, dataset, hp)
        n_done = t + 1
        if state.d_plus > max_d_plus:
            break
        state = gibbs_sweep(state, dataset, hp, rng_s, _swap_stick_beta=swap)
        if family == "gaussian":
            # finish the transition by re-instantiating the collapsed
            # parameters conditional on the same data the sweep saw
            phi = feature_map(state.masked_latents, state.W)
            for j in range(j_total):
                state.beta[j], state.sigma2[j] = update_gaussian_theta(
                    state, dataset, j, phi, rng_s, hp
                )
    successive = successive[:n_done]

    report = {}
    for k, name in enumerate(GEWEKE_STATS):
        mf, ms = forward[:, k].mean(), successive[:, k].mean()
        se_f = forward[:, k].std(ddof=1) / np.sqrt(iters)
        se_s = _batch_se(successive[:, k])
        z = (mf - ms) / np.sqrt(se_f ** 2 + se_s ** 2 + 1e-300)
        report[name] = float(2.0 * norm.sf(abs(z)))
    return report


def _batch_se(x, n_batches=40):
    x = np.asarray(x, dtype=float)
    n = x.size - (x.size % n_batches)
    if n < n_batches:
        return x.std(ddof=1) / np.sqrt(max(x.size, 2))
    means = x[:n].reshape(n_batches, -1).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)

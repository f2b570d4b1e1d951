"""Data model and global sampler state.

The observed matrix, its entrywise observation mask and the declared
observation family live in ``Dataset``.  Everything the sampler updates
lives in ``ModelState``; the number of instantiated latent dimensions
grows and shrinks during inference, so every D-indexed array is resized
together and ``validate_state`` checks they stay consistent.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DataValidationError
from .rng import as_generator

LIKELIHOODS = ("gaussian", "bernoulli", "nb", "poisson", "multinomial")
COUNT_LIKELIHOODS = ("bernoulli", "nb", "poisson", "multinomial")


@dataclass
class Dataset:
    """Observed matrix with entrywise mask and observation family.

    Y : (N, J) observations; real for gaussian, nonnegative integers
        for the count families.
    mask : (N, J) booleans, True where the entry is observed (training).
    likelihood : one of LIKELIHOODS.
    row_totals : (N,) integer row sums, multinomial only.
    """

    Y: np.ndarray
    mask: np.ndarray
    likelihood: str
    row_totals: np.ndarray = None

    @property
    def n_rows(self):
        return self.Y.shape[0]

    @property
    def n_cols(self):
        return self.Y.shape[1]

    def validate(self):
        """Check family-specific value constraints and mask coverage."""
        if self.Y.ndim != 2 or self.Y.size == 0:
            raise DataValidationError("Y must be a nonempty 2-d matrix")
        if self.mask.shape != self.Y.shape or self.mask.dtype != bool:
            raise DataValidationError("mask must be a boolean matrix matching Y")
        if self.likelihood not in LIKELIHOODS:
            raise DataValidationError(f"unknown likelihood {self.likelihood!r}")
        if not np.all(np.isfinite(self.Y)):
            raise DataValidationError("Y contains non-finite entries")
        if self.likelihood in COUNT_LIKELIHOODS:
            bad = (self.Y < 0) | (self.Y != np.round(self.Y))
            if np.any(bad):
                i, j = np.argwhere(bad)[0]
                raise DataValidationError(
                    f"{self.likelihood} data must be nonnegative integers; "
                    f"offending entry at row {i}, column {j}"
                )
        if self.likelihood == "bernoulli" and np.any((self.Y != 0) & (self.Y != 1)):
            bad = np.argwhere((self.Y != 0) & (self.Y != 1))[0]
            raise DataValidationError(f"bernoulli entries must be 0/1; offending entry at {tuple(bad)}")
        if not np.all(self.mask.any(axis=1)):
            raise DataValidationError("every row needs at least one observed entry")
        if not np.all(self.mask.any(axis=0)):
            raise DataValidationError("every column needs at least one observed entry")
        if self.likelihood == "multinomial":
            totals = self.Y.sum(axis=1)
            if self.row_totals is None or not np.array_equal(self.row_totals, totals):
                raise DataValidationError("row_totals must equal the full row sums of Y")
        return self


def make_dataset(Y, likelihood, mask=None):
    """Build a Dataset, filling in an all-observed mask and row totals."""
    Y = np.asarray(Y, dtype=float)
    if mask is None:
        mask = np.ones(Y.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    row_totals = None
    if likelihood == "multinomial":
        row_totals = Y.sum(axis=1)
    return Dataset(Y=Y, mask=mask, likelihood=likelihood, row_totals=row_totals)


@dataclass
class Hyperparameters:
    """Fixed prior constants.

    The normal-inverse-Wishart pieces are materialized per dimension count:
    the prior mean is ``niw_loc`` broadcast, the scale matrix is
    ``psi0_scale`` times the identity, and the degrees of freedom are
    ``D + niw_extra_dof`` so the prior stays proper (and projects
    consistently under column pruning) as the latent dimension changes.
    """

    n_features: int = 50          # M, number of random frequencies
    alpha0: float = 1.0           # Gamma(shape) prior on the column-process concentration
    beta0: float = 1.0            # Gamma(rate)
    a_eta: float = 1.0            # Gamma(shape) prior on the frequency-mixture concentration
    b_eta: float = 1.0            # Gamma(rate)
    niw_loc: float = 0.0
    lambda0: float = 1.0
    niw_extra_dof: float = 2.0
    psi0_scale: float = 1.0
    beta_var: float = 1.0         # prior variance of basis regression weights
    intercept_var: float = 10.0   # prior variance of the intercept weight
    a0: float = 2.0               # inverse-gamma shape on gaussian column noise
    b0: float = 2.0               # inverse-gamma scale
    e0: float = 1.0               # Gamma(shape) prior on nb dispersion
    f0: float = 1.0               # Gamma(rate)
    loading_var: float = 1.0      # prior variance of linear-baseline loadings

    def validate(self):
        for name in ("beta0", "b_eta", "lambda0", "psi0_scale", "beta_var",
                     "intercept_var", "alpha0", "a_eta", "a0", "b0", "e0", "f0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"hyperparameter {name} must be > 0")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.niw_extra_dof <= 1:
            raise ValueError("niw_extra_dof must exceed 1 for a proper prior")
        return self

    def niw_mu0(self, d):
        return np.full(d, self.niw_loc)

    def niw_nu0(self, d):
        return d + self.niw_extra_dof

    def niw_psi0(self, d):
        return self.psi0_scale * np.eye(d)

    def beta_prior(self, n_features=None):
        """Prior mean vector and covariance diagonal for one weight column."""
        m = self.n_features if n_features is None else n_features
        return self.beta_prior_width(2 * m + 1)

    def beta_prior_width(self, width):
        """Same, for an explicit design width; the last column is the
        intercept."""
        mean = np.zeros(width)
        var = np.full(width, self.beta_var)
        var[-1] = self.intercept_var
        return mean, var


@dataclass
class ModelState:
    """All latent quantities of the sampler at one point in the chain."""

    kind = "rflvm"

    X: np.ndarray            # (N, D) latent coordinates
    Z: np.ndarray            # (N, D) boolean sparsity indicators
    pi: np.ndarray           # (D,) stick weights, strictly decreasing
    W: np.ndarray            # (M, D) random frequencies
    zeta: np.ndarray         # (M,) cluster labels for the frequencies
    cluster_mu: np.ndarray   # (K, D) cluster means
    cluster_sigma: np.ndarray  # (K, D, D) cluster covariances
    beta: np.ndarray         # (J, 2M + 1) regression weights incl. intercept
    ibp_alpha: float
    dp_eta: float
    sigma2: np.ndarray = None   # (J,) gaussian column noise (scoring only)
    nb_r: np.ndarray = None     # (J,) negative binomial dispersions

    @property
    def d_plus(self):
        return self.X.shape[1]

    @property
    def k_plus(self):
        return int(np.unique(self.zeta).size)

    @property
    def masked_latents(self):
        """X with inactive coordinates zeroed out."""
        return self.X * self.Z

    def copy(self):
        return ModelState(
            X=self.X.copy(), Z=self.Z.copy(), pi=self.pi.copy(), W=self.W.copy(),
            zeta=self.zeta.copy(), cluster_mu=self.cluster_mu.copy(),
            cluster_sigma=self.cluster_sigma.copy(), beta=self.beta.copy(),
            ibp_alpha=self.ibp_alpha, dp_eta=self.dp_eta,
            sigma2=None if self.sigma2 is None else self.sigma2.copy(),
            nb_r=None if self.nb_r is None else self.nb_r.copy(),
        )


@dataclass
class ChainRecord:
    """Per-iteration scalar diagnostics plus an optional thinned snapshot."""

    iteration: int
    d_plus: int
    k_plus: int
    train_loglik: float
    snapshot: ModelState = None


def stick_prior_draw(d, alpha, rng):
    """Draw d stick weights from the decreasing multiplicative-beta prior."""
    nu = rng.beta(alpha, 1.0, size=d)
    return np.cumprod(nu)


def init_state(dataset, hp, seed, d_init=2):
    """Initialize the sampler state from the priors.

    Latent coordinates and frequencies start standard normal, all d_init
    indicator columns start active, stick weights come from their prior
    (sorted decreasing), all frequencies share one cluster, and the
    regression weights and concentrations come from their priors.
    Deterministic given the seed.
    """
    if d_init < 1:
        raise ValueError("d_init must be >= 1")
    if dataset.Y.size == 0:
        raise DataValidationError("empty dataset")
    rng = as_generator(seed)
    n, j = dataset.Y.shape
    m = hp.n_features

    alpha = rng.gamma(hp.alpha0, 1.0 / hp.beta0)
    eta = rng.gamma(hp.a_eta, 1.0 / hp.b_eta)

    X = rng.standard_normal((n, d_init))
    Z = np.ones((n, d_init), dtype=bool)
    pi = np.sort(stick_prior_draw(d_init, alpha, rng))[::-1].copy()
    W = rng.standard_normal((m, d_init))
    zeta = np.zeros(m, dtype=int)

    from .dpmix import niw_prior_draw  # local import to avoid a cycle
    mu0, sigma0 = niw_prior_draw(hp, d_init, rng)
    cluster_mu = mu0[None, :]
    cluster_sigma = sigma0[None, :, :]

    beta_mean, beta_var = hp.beta_prior()
    sigma2 = None
    if dataset.likelihood == "gaussian":
        sigma2 = 1.0 / rng.gamma(hp.a0, 1.0 / hp.b0, size=j)
        beta = beta_mean + np.sqrt(beta_var * sigma2[:, None]) * rng.standard_normal((j, beta_mean.size))
    else:
        beta = beta_mean + np.sqrt(beta_var) * rng.standard_normal((j, beta_mean.size))
    nb_r = None
    if dataset.likelihood == "nb":
        nb_r = rng.gamma(hp.e0, 1.0 / hp.f0, size=j)
    if dataset.likelihood == "multinomial":
        beta[-1] = 0.0

    return ModelState(
        X=X, Z=Z, pi=pi, W=W, zeta=zeta, cluster_mu=cluster_mu,
        cluster_sigma=cluster_sigma, beta=beta, ibp_alpha=alpha, dp_eta=eta,
        sigma2=sigma2, nb_r=nb_r,
    )


def prune_inactive(state):
    """Drop latent columns whose indicator column is all zero.

    Remaining columns keep their relative order; cluster means and
    covariances lose the matching coordinates.  Idempotent, and pruning
    to zero columns is allowed mid-sweep (extension follows immediately).
    """
    keep = np.asarray(state.Z.sum(axis=0) > 0)
    if keep.all():
        return state
    return replace(
        state,
        X=state.X[:, keep],
        Z=state.Z[:, keep],
        pi=state.pi[keep],
        W=state.W[:, keep],
        cluster_mu=state.cluster_mu[:, keep],
        cluster_sigma=state.cluster_sigma[:, keep][:, :, keep],
    )


def permute_columns(state, order):
    """Reorder latent columns (and all D-indexed arrays) by ``order``."""
    order = np.asarray(order)
    return replace(
        state,
        X=state.X[:, order],
        Z=state.Z[:, order],
        pi=state.pi[order],
        W=state.W[:, order],
        cluster_mu=state.cluster_mu[:, order],
        cluster_sigma=state.cluster_sigma[:, order][:, :, order],
    )


def validate_state(state, dataset=None, require_active=False):
    """Assert the cross-array consistency invariants; used in debug runs."""
    d = state.d_plus
    assert state.Z.shape == state.X.shape, "X/Z shape mismatch"
    assert state.pi.shape == (d,), "pi length mismatch"
    assert state.W.shape[1] == d, "W column mismatch"
    assert state.cluster_mu.shape[1] == d and state.cluster_sigma.shape[1:] == (d, d)
    if d:
        assert np.all(state.pi > 0) and np.all(state.pi < 1), "pi out of (0, 1)"
        assert np.all(np.diff(state.pi) < 0), "pi not strictly decreasing"
    if require_active and d:
        assert np.all(state.Z.sum(axis=0) > 0), "inactive column survived the sweep"
    for k in range(state.cluster_sigma.shape[0]):
        sig = state.cluster_sigma[k]
        assert np.allclose(sig, sig.T, atol=1e-10), "cluster covariance not symmetric"
        if d:
            np.linalg.cholesky(sig)
    assert state.ibp_alpha > 0 and state.dp_eta > 0
    if dataset is not None and dataset.likelihood == "multinomial":
        assert np.all(state.beta[-1] == 0.0), "reference column weights must stay zero"
    return True

"""Estimator-style wrappers so the samplers compose with sklearn pipelines.

``fit`` runs the MCMC chain on the observed matrix, ``transform`` returns
the masked latent coordinates of the training rows from the final
posterior snapshot, and held-out entries (given via ``mask``) can be
scored with ``score_heldout``.  Hyperparameters are plain constructor
arguments, so ``get_params`` / ``set_params`` and ``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .evaluation import score
from .gibbs import run_chain
from .linear import run_linear_chain
from .model import Hyperparameters, make_dataset


class _ChainEstimatorMixin:
    def _check_fitted(self):
        if not hasattr(self, "records_"):
            raise NotFittedError("call fit before using this estimator")

    def _final_snapshot(self):
        self._check_fitted()
        for record in reversed(self.records_):
            if record.snapshot is not None:
                return record.snapshot
        raise NotFittedError("no posterior snapshot retained; lower burnin")

    def transform(self, X=None):
        """Masked latent coordinates of the training rows, final snapshot."""
        snap = self._final_snapshot()
        return snap.masked_latents

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, **fit_params).transform()

    def score_heldout(self):
        """Posterior-averaged log likelihood (and perplexity for count
        data) of the entries masked out at fit time."""
        self._check_fitted()
        return score(self.records_, self.dataset_)

    @property
    def d_plus_(self):
        return self._final_snapshot().d_plus


class SparseRFLVM(_ChainEstimatorMixin, BaseEstimator):
    """Sparse infinite random-feature latent variable model.

    Parameters
    ----------
    likelihood : one of gaussian, bernoulli, nb, poisson, multinomial.
    n_features : number of random frequencies (basis size is 2 * M + 1).
    n_iters, burnin, thin : chain length controls; burnin defaults to
        half the iterations.
    d_init : number of latent dimensions at initialization.
    random_state : seed for the whole chain.
    hyper : optional Hyperparameters overriding the defaults.
    """

    def __init__(self, likelihood="gaussian", n_features=50, n_iters=100,
                 burnin=None, thin=1, d_init=2, random_state=0, hyper=None,
                 validate_sweeps=False):
        self.likelihood = likelihood
        self.n_features = n_features
        self.n_iters = n_iters
        self.burnin = burnin
        self.thin = thin
        self.d_init = d_init
        self.random_state = random_state
        self.hyper = hyper
        self.validate_sweeps = validate_sweeps

    def _make_hp(self):
        if self.hyper is not None:
            hp = self.hyper
            hp.n_features = self.n_features
            return hp.validate()
        return Hyperparameters(n_features=self.n_features).validate()

    def fit(self, X, y=None, mask=None):
        """Run the sampler on the observed matrix X (mask marks training
        entries; default all observed)."""
        X = check_array(X, dtype=float)
        dataset = make_dataset(X, self.likelihood, mask=mask)
        dataset.validate()
        self.dataset_ = dataset
        self.records_ = run_chain(
            dataset, self._make_hp(), iters=self.n_iters, burnin=self.burnin,
            thin=self.thin, seed=self.random_state, d_init=self.d_init,
            validate=self.validate_sweeps,
        )
        return self


class IBPLinearFactorModel(_ChainEstimatorMixin, BaseEstimator):
    """Sparse infinite linear-Gaussian factor model baseline."""

    def __init__(self, n_iters=100, burnin=None, thin=1, d_init=2,
                 random_state=0, hyper=None):
        self.n_iters = n_iters
        self.burnin = burnin
        self.thin = thin
        self.d_init = d_init
        self.random_state = random_state
        self.hyper = hyper

    def fit(self, X, y=None, mask=None):
        X = check_array(X, dtype=float)
        dataset = make_dataset(X, "gaussian", mask=mask)
        dataset.validate()
        self.dataset_ = dataset
        hp = self.hyper if self.hyper is not None else Hyperparameters()
        self.records_ = run_linear_chain(
            dataset, hp.validate(), iters=self.n_iters, burnin=self.burnin,
            thin=self.thin, seed=self.random_state, d_init=self.d_init,
        )
        return self

"""Data ingestion, holdout protocol, predictive scoring and synthetic data.

Scoring averages the per-entry predictive density over the retained
posterior snapshots: test log likelihood sums log of the snapshot-mean
density over held-out entries, and count families additionally report
perplexity normalized by the held-out token mass.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import DataValidationError
from .features import feature_map
from .model import COUNT_LIKELIHOODS, Dataset, make_dataset
from .rng import as_generator

HOLDOUT_MAX_TRIES = 1000


def load_matrix(path, fmt="csv", likelihood="gaussian", header=False,
                sqrt_transform=False):
    """Read a rectangular numeric file into an all-observed Dataset.

    Gaussian runs standardize every column to mean zero, unit variance
    (after an optional square-root transform for count matrices fit with
    a gaussian model); count runs keep the raw integers and reject
    negative or fractional entries.
    """
    delimiter = {"csv": ",", "tsv": "\t"}.get(fmt)
    if delimiter is None:
        raise DataValidationError(f"unknown format {fmt!r}")
    try:
        raw = np.genfromtxt(path, delimiter=delimiter,
                            skip_header=1 if header else 0)
    except ValueError as err:
        raise DataValidationError(f"could not parse {path}: {err}") from err
    raw = np.atleast_2d(raw)
    if raw.size == 0:
        raise DataValidationError("empty data file")
    if np.isnan(raw).any():
        i, j = np.argwhere(np.isnan(raw))[0]
        raise DataValidationError(
            f"non-numeric or missing cell at row {i}, column {j}"
        )
    if likelihood == "gaussian":
        if sqrt_transform:
            if np.any(raw < 0):
                raise DataValidationError("square-root transform needs nonnegative data")
            raw = np.sqrt(raw)
        sd = raw.std(axis=0)
        if np.any(sd == 0):
            j = int(np.flatnonzero(sd == 0)[0])
            raise DataValidationError(
                f"column {j} has zero variance; cannot standardize"
            )
        raw = (raw - raw.mean(axis=0)) / sd
    else:
        bad = (raw < 0) | (raw != np.round(raw))
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise DataValidationError(
                f"{likelihood} data must be nonnegative integers; "
                f"offending entry at row {i}, column {j}"
            )
    return make_dataset(raw, likelihood).validate()


def holdout_split(dataset, fraction, seed):
    """Mask a uniform sample of entries as test, keeping at least one
    training entry in every row and column. Deterministic given the seed."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("holdout fraction must be in (0, 1)")
    n, j = dataset.Y.shape
    n_test = int(np.floor(fraction * n * j))
    rng = as_generator(seed)
    if n_test == 0:
        return Dataset(Y=dataset.Y, mask=np.ones((n, j), dtype=bool),
                       likelihood=dataset.likelihood, row_totals=dataset.row_totals)
    for _ in range(HOLDOUT_MAX_TRIES):
        flat = rng.choice(n * j, size=n_test, replace=False)
        mask = np.ones(n * j, dtype=bool)
        mask[flat] = False
        mask = mask.reshape(n, j)
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return Dataset(Y=dataset.Y, mask=mask,
                           likelihood=dataset.likelihood,
                           row_totals=dataset.row_totals)
    raise DataValidationError(
        "holdout fraction incompatible with one training entry per row and column"
    )


# ---------------------------------------------------------------------------
# Predictive scoring.
# ---------------------------------------------------------------------------

def _snapshot_entry_logdens(snapshot, dataset, test_idx):
    """Per-test-entry log predictive density under one posterior snapshot."""
    rows, cols = test_idx
    if getattr(snapshot, "kind", None) == "linear":
        psi = snapshot.masked_latents @ snapshot.loadings
        mu = psi[rows, cols]
        s2 = snapshot.sigma2
        return -0.5 * np.log(2.0 * np.pi * s2) - (dataset.Y[rows, cols] - mu) ** 2 / (2.0 * s2)

    phi = feature_map(snapshot.masked_latents, snapshot.W)
    psi = phi @ snapshot.beta.T
    y = dataset.Y[rows, cols]
    family = dataset.likelihood
    if family == "gaussian":
        mu = psi[rows, cols]
        s2 = snapshot.sigma2[cols]
        return -0.5 * np.log(2.0 * np.pi * s2) - (y - mu) ** 2 / (2.0 * s2)
    if family == "bernoulli":
        p = psi[rows, cols]
        return y * p - np.logaddexp(0.0, p)
    if family == "poisson":
        lam = psi[rows, cols]
        return y * lam - np.exp(lam) - gammaln(y + 1.0)
    if family == "nb":
        r = snapshot.nb_r[cols]
        p = psi[rows, cols]
        return (gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
                + y * p - (y + r) * np.logaddexp(0.0, p))
    if family == "multinomial":
        logprob = psi - logsumexp(psi, axis=1, keepdims=True)
        return y * logprob[rows, cols]
    raise ValueError(family)


@dataclass
class EvalReport:
    """Aggregated held-out predictive results across trials."""

    metric_name: str                    # "test_loglik" or "perplexity"
    per_trial: list
    mean: float
    se: float
    d_plus: dict
    config_echo: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def to_dict(self):
        return {
            self.metric_name: {
                "mean": self.mean,
                "se": self.se,
                "per_trial": self.per_trial,
            },
            "d_plus": self.d_plus,
            "config_echo": self.config_echo,
            "runtime_s": self.runtime_s,
        }

    def to_json(self, **kwargs):
        kwargs.setdefault("sort_keys", True)
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)


def score(records, dataset):
    """Posterior-averaged held-out log likelihood for one chain.

    Returns (test_loglik, perplexity-or-None): the log likelihood sums
    log mean-over-snapshots predictive density at every held-out entry;
    count families also get perplexity exp(-loglik / heldout token mass).
    """
    snapshots = [r.snapshot for r in records if r.snapshot is not None]
    if not snapshots:
        raise ValueError("no snapshots retained; increase iters or lower burnin")
    test_mask = ~dataset.mask
    test_idx = np.where(test_mask)
    if test_idx[0].size == 0:
        return 0.0, (1.0 if dataset.likelihood in COUNT_LIKELIHOODS else None)
    logdens = np.stack([
        _snapshot_entry_logdens(s, dataset, test_idx) for s in snapshots
    ])
    entry_ll = logsumexp(logdens, axis=0) - np.log(len(snapshots))
    test_ll = float(entry_ll.sum())
    perplexity = None
    if dataset.likelihood in COUNT_LIKELIHOODS:
        token_mass = float(dataset.Y[test_idx].sum())
        perplexity = float(np.exp(-test_ll / max(token_mass, 1.0)))
    return test_ll, perplexity


def intercept_only_loglik(dataset):
    """Held-out gaussian log likelihood of a per-column mean/variance fit
    on the training entries; the floor any real model must beat."""
    test_ll = 0.0
    for j in range(dataset.n_cols):
        obs = dataset.mask[:, j]
        held = ~obs
        if not held.any():
            continue
        mu = dataset.Y[obs, j].mean()
        s2 = max(dataset.Y[obs, j].var(), 1e-12)
        y = dataset.Y[held, j]
        test_ll += float(np.sum(
            -0.5 * np.log(2.0 * np.pi * s2) - (y - mu) ** 2 / (2.0 * s2)
        ))
    return test_ll


# ---------------------------------------------------------------------------
# Synthetic generator.
# ---------------------------------------------------------------------------

CAMBRIDGE_SIDE = 6
CAMBRIDGE_D_TRUE = 4
CAMBRIDGE_RATES = (0.8, 0.65, 0.5, 0.35)
_FREQS_PER_DIM = 6


def cambridge_templates():
    """Four bar/corner shapes on the pixel grid, flattened to length 36."""
    side = CAMBRIDGE_SIDE
    t = np.zeros((CAMBRIDGE_D_TRUE, side, side))
    t[0, :, 1] = 1.0                 # vertical bar
    t[1, 4, :] = 1.0                 # horizontal bar
    t[2, 0:2, 4:6] = 1.0             # top-right block
    t[3, 3:6, 0] = 1.0               # bottom-left corner piece
    t[3, 5, 0:3] = 1.0
    return t.reshape(CAMBRIDGE_D_TRUE, side * side)


def generate_cambridge(n, noise, seed):
    """Sparse nonlinear synthetic data on a 6x6 pixel grid.

    Each of the four latent dimensions paints one template through its own
    block of random sine features, so a row's pixels are a sum of nonlinear
    functions of its active latent coordinates plus gaussian noise.  The
    generator is an exact instance of the random-feature model family.

    Returns (Dataset, truth) where truth holds the indicator matrix, the
    latent coordinates, the noiseless signal and the activation rates.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(seed)
    templates = cambridge_templates()
    d_true = CAMBRIDGE_D_TRUE
    rates = np.array(CAMBRIDGE_RATES)
    Z = rng.uniform(size=(n, d_true)) < rates[None, :]
    X = rng.standard_normal((n, d_true))
    freqs = 1.5 * rng.standard_normal((d_true, _FREQS_PER_DIM))
    coefs = 3.0 * rng.standard_normal((d_true, _FREQS_PER_DIM))
    v = X * Z
    # g[i, d] = sum_m c_dm sin(w_dm v_id) / sqrt(total frequency count)
    g = np.einsum("dm,idm->id", coefs,
                  np.sin(v[:, :, None] * freqs[None, :, :]))
    g /= np.sqrt(d_true * _FREQS_PER_DIM)
    signal = g @ templates
    Y = signal + noise * rng.standard_normal(signal.shape)
    truth = {
        "Z": Z,
        "X": X,
        "d_true": d_true,
        "signal": signal,
        "rates": rates,
        "templates": templates,
    }
    return make_dataset(Y, "gaussian"), truth


# ---------------------------------------------------------------------------
# Multi-trial evaluation harness.
# ---------------------------------------------------------------------------

def _d_plus_summary(all_records, burnin):
    post = [r.d_plus for recs in all_records for r in recs if r.iteration >= burnin]
    values, counts = np.unique(post, return_counts=True)
    mode = int(values[np.argmax(counts)])
    return {
        "mode": mode,
        "mean": float(np.mean(post)),
        "per_trial_last": [int(recs[-1].d_plus) for recs in all_records],
    }


def evaluate(dataset_full, hp, likelihood, iters=100, burnin=None, thin=1,
             holdout=0.2, trials=5, seed=0, d_init=2, baseline=None,
             n_threads=1, config_echo=None):
    """Run the holdout protocol over several seeded trials and aggregate.

    Each trial gets its own deterministic stream for the mask and the
    chain, so results are identical for any thread count.  ``baseline``
    may name "ibp-lfm" to run the linear factor model instead.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .gibbs import run_chain
    from .linear import run_linear_chain
    from .model import Hyperparameters  # noqa: F401  (re-export convenience)
    from .rng import RngStream

    if burnin is None:
        burnin = iters // 2
    t_start = time.time()
    root = RngStream(int(seed))

    def one_trial(t):
        trial = root.child("trial", t)
        ds = holdout_split(dataset_full, holdout, trial.child("mask"))
        if baseline == "ibp-lfm":
            records = run_linear_chain(ds, hp, iters=iters, burnin=burnin,
                                       thin=thin, seed=trial.child("chain"),
                                       d_init=d_init)
        else:
            records = run_chain(ds, hp, iters=iters, burnin=burnin, thin=thin,
                                seed=trial.child("chain"), d_init=d_init)
        test_ll, perplexity = score(records, ds)
        return records, test_ll, perplexity

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one_trial, range(trials)))
    else:
        results = [one_trial(t) for t in range(trials)]

    all_records = [r[0] for r in results]
    use_perplexity = likelihood in COUNT_LIKELIHOODS
    per_trial = [r[2] if use_perplexity else r[1] for r in results]
    per_trial = [float(v) for v in per_trial]
    mean = float(np.mean(per_trial))
    se = float(np.std(per_trial, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return EvalReport(
        metric_name="perplexity" if use_perplexity else "test_loglik",
        per_trial=per_trial,
        mean=mean,
        se=se,
        d_plus=_d_plus_summary(all_records, burnin),
        config_echo=config_echo or {},
        runtime_s=round(time.time() - t_start, 3),
    ), all_records

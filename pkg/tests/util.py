"""Shared helpers for the test suite."""

import numpy as np


def batch_se(x, n_batches=30):
    """Standard error of the mean of a correlated sequence via batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size - (x.size % n_batches)
    means = x[:n].reshape(n_batches, -1).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


def combined_se(*ses):
    return float(np.sqrt(sum(s ** 2 for s in ses)))


def pg_series_mean(b, c, n_terms=10**4):
    """Mean of PG(b, c) from the defining weighted series of Gamma(b, 1)
    variables, truncated at n_terms."""
    k = np.arange(1, n_terms + 1)
    return b / (2.0 * np.pi ** 2) * np.sum(1.0 / ((k - 0.5) ** 2 + c ** 2 / (4.0 * np.pi ** 2)))

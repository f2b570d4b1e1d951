"""Random Fourier feature evaluation and Monte Carlo kernel estimates.

The basis for latent positions V (rows v_i) under frequencies W (rows w_m)
is the 2M-column sin/cos expansion scaled by M^(-1/2), followed by a
constant intercept column.  The inner product of two non-intercept rows is
an unbiased Monte Carlo estimate of the stationary kernel whose spectral
density generated W.
"""

import numpy as np


def feature_map(V, W):
    """Evaluate the random basis at the rows of V.

    Parameters
    ----------
    V : array, shape (N, D)
        Input points, one per row (the masked latent positions x_i * z_i).
    W : array, shape (M, D)
        Random frequencies, one per row.

    Returns
    -------
    Phi : array, shape (N, 2M + 1)
        Columns [sin(w_1'v), cos(w_1'v), ..., sin(w_M'v), cos(w_M'v)] / sqrt(M)
        followed by a constant 1 column.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if V.shape[1] != W.shape[1]:
        raise ValueError(
            f"dimension mismatch: V has {V.shape[1]} columns, W has {W.shape[1]}"
        )
    n, m = V.shape[0], W.shape[0]
    proj = V @ W.T
    phi = np.empty((n, 2 * m + 1))
    scale = 1.0 / np.sqrt(m) if m > 0 else 1.0
    phi[:, 0:2 * m:2] = np.sin(proj) * scale
    phi[:, 1:2 * m:2] = np.cos(proj) * scale
    phi[:, 2 * m] = 1.0
    return phi


def feature_row(v, W):
    """Basis row for a single input point; returns shape (2M + 1,).

    Lean path used by the samplers' inner loops; inputs are trusted.
    """
    m = W.shape[0]
    proj = W @ v
    out = np.empty(2 * m + 1)
    scale = 1.0 / np.sqrt(m) if m else 1.0
    out[0:2 * m:2] = np.sin(proj) * scale
    out[1:2 * m:2] = np.cos(proj) * scale
    out[2 * m] = 1.0
    return out


def kernel_estimate(x, xp, W):
    """Monte Carlo kernel estimate <phi(x), phi(xp)> over non-intercept columns."""
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if x.shape[0] != W.shape[1] or xp.shape[0] != W.shape[1]:
        raise ValueError("dimension mismatch between inputs and frequencies")
    # sin a sin b + cos a cos b = cos(a - b), averaged over frequencies
    return float(np.mean(np.cos(W @ (x - xp))))

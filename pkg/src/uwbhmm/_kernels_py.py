"""Pure-numpy fallback for the compiled forward-backward kernel.

The loop runs over bins and is vectorised across sequences, so a batch of
observation vectors costs one Python-level pass of length ``n``.
"""
import numpy as np


def fb_batch(b, pi, trans):
    """Scaled two-state forward-backward over a batch of sequences.

    Parameters
    ----------
    b : ndarray, shape (m, n, 2)
        Emission likelihoods, strictly positive. Each row may carry an
        arbitrary positive scale; the caller adds that scale back into the
        log-likelihood.
    pi : ndarray, shape (2,)
        Initial state distribution.
    trans : ndarray, shape (2, 2)
        Row-stochastic transition matrix.

    Returns
    -------
    gamma : ndarray, shape (m, n, 2)
        Smoothed state posteriors.
    xi : ndarray, shape (m, 2, 2)
        Expected transition counts summed over bins, per sequence.
    loglik : ndarray, shape (m,)
        Sum of log scaling factors (log-likelihood of the scaled emissions).
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    m, n, _ = b.shape

    fwd = np.empty((m, n, 2))
    scale = np.empty((m, n))
    a = pi[None, :] * b[:, 0, :]
    c = a.sum(axis=1)
    fwd[:, 0, :] = a / c[:, None]
    scale[:, 0] = c
    for k in range(1, n):
        a = (fwd[:, k - 1, :] @ trans) * b[:, k, :]
        c = a.sum(axis=1)
        fwd[:, k, :] = a / c[:, None]
        scale[:, k] = c

    gamma = np.empty((m, n, 2))
    xi = np.zeros((m, 2, 2))
    gamma[:, n - 1, :] = fwd[:, n - 1, :]
    beta = np.ones((m, 2))
    for k in range(n - 2, -1, -1):
        bb = b[:, k + 1, :] * beta / scale[:, k + 1, None]
        xi += fwd[:, k, :, None] * trans[None, :, :] * bb[:, None, :]
        beta = bb @ trans.T
        g = fwd[:, k, :] * beta
        gamma[:, k, :] = g / g.sum(axis=1, keepdims=True)

    return gamma, xi, np.log(scale).sum(axis=1)

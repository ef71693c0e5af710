"""Convergence diagnostics for multi-chain MCMC output.

Arrays are shaped ``(n_chains, n_draws)`` for a single scalar parameter.
"""

from __future__ import annotations

import numpy as np

RHAT_WARNING = 1.01


def split_chains(x: np.ndarray) -> np.ndarray:
    """Split each chain in half, dropping the middle draw of odd-length chains."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction factor.

    Returns ``nan`` with fewer than two chains or fewer than four draws per
    chain, and ``1.0`` for a parameter that is constant across all draws.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
        return float("nan")
    s = split_chains(x)
    n = s.shape[1]
    chain_means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    B = n * chain_means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(x - x.mean(), size)
    acov = np.fft.irfft(fx * np.conjugate(fx), size)[:n]
    return acov / n


def effective_sample_size(x: np.ndarray) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = np.array([_autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    if W == 0:
        return float(m * n)
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum of adjacent pairs while positive, forced monotone
    t = 0
    pair_sums = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        pair_sums.append(p)
        t += 2
    pair_sums = np.minimum.accumulate(np.array(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * pair_sums.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)

"""Citation dynamics with a publication-dependent rate.

Time is discrete with daily resolution. Day ``t = 0`` is the day the
preprint was posted and ``T_prime`` is the publication day (counted as a
preprint day). On day ``t`` an article receives

    c(t) ~ Poisson(rate(t) * f(t) * (m + C(t - 1)))

citations, where ``rate(t)`` is ``phi`` up to and including ``T_prime`` and
``phi * theta`` afterwards, ``f`` is an exponential decay discretised per
day and ``C`` is the running citation total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError

DEFAULT_M = 30.0


@dataclass(frozen=True)
class ArticleParams:
    """Per-article parameters and timeline.

    Attributes
    ----------
    phi : float
        Latent citation rate (>= 0).
    beta : float
        Inverse decay rate in days (> 0).
    T_prime : int
        Preprint duration in days; the publication day.
    T : int
        Last observed day (>= T_prime).
    """

    phi: float
    beta: float
    T_prime: int
    T: int

    def __post_init__(self):
        if not self.phi >= 0:
            raise DomainError(f"phi must be >= 0, got {self.phi}")
        if not self.beta > 0:
            raise DomainError(f"beta must be > 0, got {self.beta}")
        if not 0 <= self.T_prime <= self.T:
            raise DomainError(
                f"need 0 <= T_prime <= T, got T_prime={self.T_prime}, T={self.T}")


@dataclass(frozen=True)
class JournalParams:
    """Journal-level parameters: ``phi ~ LogNormal(Phi, epsilon)`` and multiplier ``theta``."""

    Phi: float
    epsilon: float
    theta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.theta > 0:
            raise DomainError(f"theta must be > 0, got {self.theta}")

    @property
    def median_rate(self) -> float:
        return math.exp(self.Phi)


@dataclass(frozen=True)
class ModelConfig:
    m: float = DEFAULT_M

    def __post_init__(self):
        if not self.m > 0:
            raise DomainError(f"m must be > 0, got {self.m}")


def _check_beta(beta):
    if np.any(np.asarray(beta) <= 0) or np.any(np.isnan(beta)):
        raise DomainError(f"beta must be > 0, got {beta}")


def _check_days(t):
    if np.any(np.asarray(t) < 0):
        raise DomainError("day index must be >= 0")


def decay_density(t, beta):
    """Mass of the exponential decay falling on day ``t``.

    ``f(t) = exp(-t/beta) - exp(-(t+1)/beta)``; sums to one over ``t >= 0``.
    Accepts scalars or arrays.
    """
    _check_beta(beta)
    _check_days(t)
    t = np.asarray(t, dtype=float)
    out = np.exp(-t / beta) * -np.expm1(-1.0 / np.asarray(beta, dtype=float))
    return out[()] if out.ndim == 0 else out


def log_decay_density(t, beta):
    _check_beta(beta)
    _check_days(t)
    t = np.asarray(t, dtype=float)
    beta = np.asarray(beta, dtype=float)
    out = -t / beta + np.log(-np.expm1(-1.0 / beta))
    return out[()] if out.ndim == 0 else out


def decay_cumulative(t, beta):
    """``F(t) = sum_{tau <= t} f(tau) = 1 - exp(-(t+1)/beta)``."""
    _check_beta(beta)
    _check_days(t)
    t = np.asarray(t, dtype=float)
    out = -np.expm1(-(t + 1.0) / beta)
    return out[()] if out.ndim == 0 else out


def log_decay_cumulative(t, beta):
    return np.log(decay_cumulative(t, beta))


def effective_rate(t, article: ArticleParams, theta: float):
    """Citation rate on day ``t``: ``phi`` through publication day, ``phi*theta`` after."""
    _check_days(t)
    t = np.asarray(t)
    out = np.where(t <= article.T_prime, article.phi, article.phi * theta).astype(float)
    return out[()] if out.ndim == 0 else out


def log_effective_rate(t, article: ArticleParams, theta: float):
    """Logarithm of :func:`effective_rate`; ``-inf`` when ``phi = 0``."""
    _check_days(t)
    t = np.asarray(t)
    with np.errstate(divide="ignore"):
        log_phi = np.log(float(article.phi))
    out = log_phi + np.where(t <= article.T_prime, 0.0, math.log(theta))
    return out[()] if out.ndim == 0 else out


def _increments(article: ArticleParams, theta: float, last_day: int) -> np.ndarray:
    days = np.arange(last_day + 1)
    return effective_rate(days, article, theta) * decay_density(days, article.beta)


def expected_curve(article: ArticleParams, theta: float, m: float = DEFAULT_M,
                   last_day: int | None = None) -> np.ndarray:
    """Exact expected cumulative citations ``E[C(t)]`` for ``t = 0..last_day``.

    Uses ``m * (prod_{tau<=t} (1 + rate*f) - 1)`` evaluated as
    ``m * expm1(cumsum(log1p(rate*f)))``.
    """
    last_day = article.T if last_day is None else last_day
    return m * np.expm1(np.cumsum(np.log1p(_increments(article, theta, last_day))))


def expected_citations_exact(t: int, article: ArticleParams, theta: float,
                             m: float = DEFAULT_M) -> float:
    """Exact ``E[C(t)]`` (product form)."""
    _check_days(t)
    return float(expected_curve(article, theta, m, last_day=int(t))[-1])


class ExpectedCitations(NamedTuple):
    pre: float
    post: float
    long_term: float


def expected_citations_approx(article: ArticleParams, theta: float,
                              m: float = DEFAULT_M) -> ExpectedCitations:
    """First-order (``log(1+x) ~ x``) expectations.

    Returns expected pre-publication citations ``m(exp(phi F(T')) - 1)``,
    post-publication citations
    ``m exp(phi F(T')) (exp(phi theta (F(T) - F(T'))) - 1)`` and the
    long-term total ``m(exp(phi theta) - 1)`` that ignores the preprint phase.
    """
    F_pub = decay_cumulative(article.T_prime, article.beta)
    F_end = decay_cumulative(article.T, article.beta)
    pre = m * math.expm1(article.phi * F_pub)
    post = m * math.exp(article.phi * F_pub) * math.expm1(article.phi * theta * (F_end - F_pub))
    long_term = m * math.expm1(article.phi * theta)
    return ExpectedCitations(pre, post, long_term)


def latent_rate_for_long_term(long_term: float, theta: float, m: float = DEFAULT_M) -> float:
    """Invert ``m(exp(phi*theta) - 1) = long_term`` for ``phi``."""
    return math.log1p(long_term / m) / theta


def counterfactual_long_term(long_term: float, theta: float, theta_new: float = 1.0,
                             m: float = DEFAULT_M) -> float:
    """Long-term citations the same article would get under multiplier ``theta_new``."""
    phi = latent_rate_for_long_term(long_term, theta, m)
    return m * math.expm1(phi * theta_new)


def instantaneous_mean_approx(t, phi: float, beta: float, m: float = DEFAULT_M):
    """Continuous-time approximation of ``E[c(t)]`` for ``theta = 1``."""
    t = np.asarray(t, dtype=float)
    out = m * phi / beta * np.exp(phi * -np.expm1(-t / beta) - t / beta)
    return out[()] if out.ndim == 0 else out


def peak_day(phi: float, beta: float) -> float | None:
    """Day at which the expected daily citations peak, ``beta * log(phi)``.

    Returns ``None`` when ``phi <= 1``: the expected daily count is then
    monotone decreasing.
    """
    _check_beta(beta)
    if phi <= 1:
        return None
    return beta * math.log(phi)


def variance_recursion_step(prev_var: float, prev_mean: float, rate: float, decay: float,
                            m: float = DEFAULT_M, covariance_term: float | None = None) -> float:
    """One step of ``Var C(t) = Var C(t-1) + Var c(t) + 2 Cov(C(t-1), c(t))``.

    With ``g = rate * decay`` the daily count is conditionally Poisson with
    mean ``g (m + C(t-1))``, so ``Var c(t) = g (m + E C(t-1)) + g^2 Var C(t-1)``
    and ``Cov(C(t-1), c(t)) = g Var C(t-1)``. Pass ``covariance_term`` to
    override the latter.
    """
    if prev_var < 0:
        raise DomainError(f"variance must be >= 0, got {prev_var}")
    g = rate * decay
    var_c = g * (m + prev_mean) + g * g * prev_var
    cov = g * prev_var if covariance_term is None else covariance_term
    return prev_var + var_c + 2.0 * cov


def variance_curve(article: ArticleParams, theta: float, m: float = DEFAULT_M,
                   last_day: int | None = None) -> np.ndarray:
    """Exact ``Var C(t)`` for ``t = 0..last_day`` via the variance recursion."""
    last_day = article.T if last_day is None else last_day
    g = _increments(article, theta, last_day)
    out = np.empty_like(g)
    mean = var = 0.0
    for t, gt in enumerate(g):
        var = variance_recursion_step(var, mean, 1.0, gt, m)
        mean = mean + gt * (m + mean)
        out[t] = var
    return out

"""Log-likelihood of citation trajectories and the hierarchical log-posterior.

The dense likelihood visits every day. The sparse one only visits days with
citations: between two cited days the running total is constant, so the
zero-count days contribute ``-(m + C) * rate * (F(b) - F(a - 1))`` in one
term, split at the publication day when the gap straddles it. Both give
the same number up to rounding.

The posterior is evaluated in an unconstrained space (logs of every positive
parameter) with the change-of-variables terms included by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InputError
from .model import DEFAULT_M, ArticleParams, decay_density, effective_rate, log_decay_density
from .simulate import CitationTrajectory

_LOG_2PI = math.log(2.0 * math.pi)


def _check_timeline(traj: CitationTrajectory, article: ArticleParams) -> None:
    if traj.T_prime != article.T_prime or traj.T != article.T:
        raise InputError(
            f"article timeline (T'={article.T_prime}, T={article.T}) does not match "
            f"trajectory (T'={traj.T_prime}, T={traj.T})")


def log_likelihood_dense(traj: CitationTrajectory, article: ArticleParams, theta: float,
                         m: float = DEFAULT_M) -> float:
    """Sum of daily Poisson log-pmfs over days ``0..T``."""
    _check_timeline(traj, article)
    days = np.arange(traj.T + 1)
    counts = traj.counts().astype(float)
    before = np.concatenate([[0.0], np.cumsum(counts)[:-1]])
    rate = effective_rate(days, article, theta) * decay_density(days, article.beta) * (m + before)
    with np.errstate(divide="ignore"):
        log_rate = (np.log(effective_rate(days, article, theta))
                    + log_decay_density(days, article.beta) + np.log(m + before))
    cited = counts > 0
    # compensated summation: terms of explosive trajectories are large and cancel
    terms = np.concatenate([-rate, counts[cited] * log_rate[cited] - gammaln(counts[cited] + 1)])
    return math.fsum(terms)


def gap_segments(traj: CitationTrajectory):
    """Day ranges ``(a, b, C)`` on which the running total ``C(t - 1)`` is constant.

    Each range ends on a cited day (or the last observed day) and together
    they tile ``0..T``.
    """
    out = []
    start, total = 0, 0
    for t, c in traj.events:
        out.append((start, t, total))
        start, total = t + 1, total + c
    if start <= traj.T:
        out.append((start, traj.T, total))
    return out


def split_at_publication(a: int, b: int, T_prime: int):
    """Split the day range ``[a, b]`` into (pre, post) parts around ``T_prime``.

    Either part is ``None`` when empty.
    """
    pre = (a, min(b, T_prime)) if a <= T_prime else None
    post = (max(a, T_prime + 1), b) if b > T_prime else None
    return pre, post


def _decay_mass(a, n_days, inv_beta):
    """``F(a + n_days - 1) - F(a - 1)``."""
    return np.exp(-a * inv_beta) * -np.expm1(-n_days * inv_beta)


def log_likelihood_sparse(traj: CitationTrajectory, article: ArticleParams, theta: float,
                          m: float = DEFAULT_M) -> float:
    """Same value as :func:`log_likelihood_dense` at a cost linear in the cited days."""
    _check_timeline(traj, article)
    phi, inv_beta, Tp = article.phi, 1.0 / article.beta, article.T_prime
    terms = []
    for a, b, total in gap_segments(traj):
        pre, post = split_at_publication(a, b, Tp)
        if pre is not None:
            terms.append(-(m + total) * phi * _decay_mass(pre[0], pre[1] - pre[0] + 1, inv_beta))
        if post is not None:
            terms.append(-(m + total) * phi * theta * _decay_mass(post[0], post[1] - post[0] + 1, inv_beta))
    total = 0
    for t, c in traj.events:
        log_rate = (math.log(phi) if phi > 0 else -math.inf) + (math.log(theta) if t > Tp else 0.0)
        log_rate += float(log_decay_density(t, article.beta)) + math.log(m + total)
        terms.append(c * log_rate - math.lgamma(c + 1))
        total += c
    return math.fsum(terms)


@dataclass(frozen=True)
class Priors:
    """Hyperparameters of the priors.

    beta ~ InvGamma(beta_shape, beta_scale), Phi ~ Normal(Phi_mean, Phi_sd),
    epsilon ~ InvGamma(epsilon_shape, epsilon_scale) and
    theta ~ Gamma(theta_shape, rate=theta_rate).
    """

    beta_shape: float = 2.0
    beta_scale: float = 3 * 365.0
    Phi_mean: float = 0.0
    Phi_sd: float = 1.0
    epsilon_shape: float = 2.0
    epsilon_scale: float = 1.0
    theta_shape: float = 2.0
    theta_rate: float = 2.0

    @property
    def theta_mode(self) -> float:
        return (self.theta_shape - 1.0) / self.theta_rate

    @property
    def beta_mode(self) -> float:
        return self.beta_scale / (self.beta_shape + 1.0)

    @property
    def epsilon_mode(self) -> float:
        return self.epsilon_scale / (self.epsilon_shape + 1.0)


@dataclass(frozen=True)
class SubsetArticle:
    """An article in a fitting subset. ``trajectory=None`` contributes prior terms only."""

    article_id: str
    journal_id: str
    trajectory: CitationTrajectory | None = None


@dataclass
class SubsetData:
    """Articles of one (field, year) subset grouped by journal."""

    journal_ids: list[str]
    articles: list[SubsetArticle]
    key: tuple | None = None

    def __post_init__(self):
        self.journal_ids = list(self.journal_ids)
        if len(set(self.journal_ids)) != len(self.journal_ids):
            raise InputError("duplicate journal ids")
        known = set(self.journal_ids)
        for art in self.articles:
            if art.journal_id not in known:
                raise InputError(f"article {art.article_id} refers to unknown journal {art.journal_id}")
        ids = [a.article_id for a in self.articles]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate article ids")

    @property
    def n_articles(self) -> int:
        return len(self.articles)

    @property
    def n_journals(self) -> int:
        return len(self.journal_ids)

    @property
    def dim(self) -> int:
        return 2 * self.n_articles + 3 * self.n_journals

    def journal_index(self) -> np.ndarray:
        pos = {j: k for k, j in enumerate(self.journal_ids)}
        return np.array([pos[a.journal_id] for a in self.articles], dtype=np.intp)

    def parameter_names(self) -> list[str]:
        a = [art.article_id for art in self.articles]
        j = self.journal_ids
        return ([f"phi[{x}]" for x in a] + [f"beta[{x}]" for x in a]
                + [f"Phi[{x}]" for x in j] + [f"epsilon[{x}]" for x in j]
                + [f"theta[{x}]" for x in j])

    @classmethod
    def prior_only(cls, n_journals: int = 1, articles_per_journal: int = 1) -> "SubsetData":
        journals = [f"J{k}" for k in range(n_journals)]
        arts = [SubsetArticle(f"A{k}.{i}", j) for k, j in enumerate(journals)
                for i in range(articles_per_journal)]
        return cls(journals, arts)


@dataclass
class UnconstrainedParams:
    """Sampler coordinates: logs of all positive parameters, ``Phi`` as is."""

    log_phi: np.ndarray
    log_beta: np.ndarray
    Phi: np.ndarray
    log_epsilon: np.ndarray
    log_theta: np.ndarray

    def __post_init__(self):
        for name in ("log_phi", "log_beta", "Phi", "log_epsilon", "log_theta"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.log_phi.shape != self.log_beta.shape:
            raise InputError("log_phi and log_beta must have the same length")
        if not self.Phi.shape == self.log_epsilon.shape == self.log_theta.shape:
            raise InputError("journal-level arrays must have the same length")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.log_phi, self.log_beta, self.Phi, self.log_epsilon,
                               self.log_theta])

    @classmethod
    def from_vector(cls, x, n_articles: int, n_journals: int) -> "UnconstrainedParams":
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * n_articles + 3 * n_journals,):
            raise InputError(f"parameter vector has shape {x.shape}, expected "
                             f"({2 * n_articles + 3 * n_journals},)")
        N, J = n_articles, n_journals
        return cls(x[:N], x[N:2 * N], x[2 * N:2 * N + J], x[2 * N + J:2 * N + 2 * J],
                   x[2 * N + 2 * J:])

    @classmethod
    def from_constrained(cls, phi, beta, Phi, epsilon, theta) -> "UnconstrainedParams":
        return cls(np.log(phi), np.log(beta), Phi, np.log(epsilon), np.log(theta))

    def constrained(self) -> dict[str, np.ndarray]:
        return {
            "phi": np.exp(self.log_phi),
            "beta": np.exp(self.log_beta),
            "Phi": self.Phi.copy(),
            "epsilon": np.exp(self.log_epsilon),
            "theta": np.exp(self.log_theta),
        }


@dataclass
class _Compiled:
    # per observed article (indices into the full article list)
    obs: np.ndarray
    n_c: np.ndarray          # total citations
    n_c_post: np.ndarray     # post-publication citations
    sum_ct: np.ndarray       # sum of count * day
    const: float             # sum c*log(m + C_before) - lgamma(c + 1)
    # rate-integral pieces
    pc_art: np.ndarray
    pc_a: np.ndarray
    pc_len: np.ndarray
    pc_w: np.ndarray
    pc_post: np.ndarray
    post_idx: np.ndarray = field(default=None)
    all_obs: bool = False
    jo_obs: np.ndarray = field(default=None)      # journal of each observed article
    jo_post: np.ndarray = field(default=None)     # journal of each post-publication piece
    n_c_post_j: np.ndarray = field(default=None)  # post-publication citations per journal


def _compile(data: SubsetData, m: float, jo: np.ndarray) -> _Compiled:
    obs, n_c, n_c_post, sum_ct = [], [], [], []
    const = 0.0
    pc_art, pc_a, pc_len, pc_w, pc_post = [], [], [], [], []
    for k, art in enumerate(data.articles):
        traj = art.trajectory
        if traj is None:
            continue
        obs.append(k)
        Tp = traj.T_prime
        total = 0
        nc = ncp = sct = 0
        for t, c in traj.events:
            const += c * math.log(m + total) - math.lgamma(c + 1)
            total += c
            nc += c
            sct += c * t
            if t > Tp:
                ncp += c
        n_c.append(nc)
        n_c_post.append(ncp)
        sum_ct.append(sct)
        for a, b, before in gap_segments(traj):
            for post, rng in enumerate(split_at_publication(a, b, Tp)):
                if rng is None:
                    continue
                pc_art.append(k)
                pc_a.append(rng[0])
                pc_len.append(rng[1] - rng[0] + 1)
                pc_w.append(m + before)
                pc_post.append(post)
    f = lambda v, dtype=float: np.asarray(v, dtype=dtype)
    comp = _Compiled(
        obs=f(obs, np.intp), n_c=f(n_c), n_c_post=f(n_c_post), sum_ct=f(sum_ct), const=const,
        pc_art=f(pc_art, np.intp), pc_a=f(pc_a), pc_len=f(pc_len), pc_w=f(pc_w),
        pc_post=f(pc_post, bool))
    comp.post_idx = np.flatnonzero(comp.pc_post)
    comp.all_obs = comp.obs.size == data.n_articles
    comp.jo_obs = jo[comp.obs]
    comp.jo_post = jo[comp.pc_art[comp.post_idx]]
    comp.n_c_post_j = np.bincount(comp.jo_obs, weights=comp.n_c_post, minlength=data.n_journals)
    return comp


class PosteriorModel:
    """Log-posterior of one subset as a function of the unconstrained vector.

    Parameters
    ----------
    data : SubsetData
    priors : Priors
    m : float
        Initial attractiveness.

    Notes
    -----
    Vector layout is ``[log_phi (N), log_beta (N), Phi (J), log_epsilon (J),
    log_theta (J)]``. Reductions use ``np.bincount`` in a fixed order so
    results are bit-stable across calls.
    """

    def __init__(self, data: SubsetData, priors: Priors | None = None, m: float = DEFAULT_M):
        self.data = data
        self.priors = priors or Priors()
        self.m = float(m)
        self.N = data.n_articles
        self.J = data.n_journals
        self.dim = data.dim
        self.jo = data.journal_index()
        self._c = _compile(data, self.m, self.jo)
        self._n_per_journal = np.bincount(self.jo, minlength=self.J).astype(float)
        p = self.priors
        beta_const = p.beta_shape * math.log(p.beta_scale) - math.lgamma(p.beta_shape)
        eps_const = p.epsilon_shape * math.log(p.epsilon_scale) - math.lgamma(p.epsilon_shape)
        theta_const = p.theta_shape * math.log(p.theta_rate) - math.lgamma(p.theta_shape)
        # normalising constants of all prior densities
        self._const = (self.N * (beta_const - 0.5 * _LOG_2PI)
                       + self.J * (eps_const + theta_const - 0.5 * _LOG_2PI - math.log(p.Phi_sd)))

    def split(self, x):
        N, J = self.N, self.J
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InputError(f"parameter vector has shape {x.shape}, expected ({self.dim},)")
        return x[:N], x[N:2 * N], x[2 * N:2 * N + J], x[2 * N + J:2 * N + 2 * J], x[2 * N + 2 * J:]

    def log_density(self, x, jacobian: bool = True) -> float:
        return self.log_density_and_gradient(x, jacobian, need_grad=False)[0]

    def gradient(self, x, jacobian: bool = True) -> np.ndarray:
        return self.log_density_and_gradient(x, jacobian)[1]

    def log_likelihood(self, x) -> float:
        u, v, _, _, w = self.split(x)
        return self._likelihood(u, v, w, need_grad=False)[0]

    def _likelihood(self, u, v, w, need_grad=True, ib=None, phi=None, theta=None):
        c = self._c
        N, J = self.N, self.J
        if c.obs.size == 0:
            return 0.0, np.zeros(N), np.zeros(N), np.zeros(J)
        if ib is None:
            ib, phi, theta = np.exp(-v), np.exp(u), np.exp(w)
        # cited days
        if c.all_obs:
            uo, ibo = u, ib
        else:
            uo, ibo = u[c.obs], ib[c.obs]
        ll = (c.const + c.n_c @ (uo + np.log(-np.expm1(-ibo))) + c.n_c_post @ w[c.jo_obs]
              - ibo @ c.sum_ct)
        # zero-count stretches, including the cited days' own rate
        art = c.pc_art
        coef = c.pc_w * phi[art]
        if c.post_idx.size:
            coef[c.post_idx] *= theta[c.jo_post]
        iba = ib[art]
        Ga = np.exp(-c.pc_a * iba)
        E = -np.expm1(-c.pc_len * iba)
        term = coef * Ga * E
        ll -= term.sum()
        if not need_grad:
            return ll, None, None, None
        dv = c.n_c / np.expm1(ibo) - c.sum_ct
        gu = -np.bincount(art, weights=term, minlength=N)
        gv = -np.bincount(art, weights=coef * iba * Ga * (c.pc_a * E - c.pc_len * (1.0 - E)),
                          minlength=N)
        if c.all_obs:
            gu += c.n_c
            gv -= ibo * dv
        else:
            gu[c.obs] += c.n_c
            gv[c.obs] -= ibo * dv
        gw = c.n_c_post_j.copy()
        if c.post_idx.size:
            gw -= np.bincount(c.jo_post, weights=term[c.post_idx], minlength=J)
        return ll, gu, gv, gw

    def log_prior(self, x, jacobian: bool = True) -> float:
        u, v, Phi, s, w = self.split(x)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._prior(u, v, Phi, s, w, jacobian, need_grad=False)[0]

    def _prior(self, u, v, Phi, s, w, jacobian, need_grad=True, ib=None, theta=None):
        p = self.priors
        N, J = self.N, self.J
        if ib is None:
            ib, theta = np.exp(-v), np.exp(w)
        jo = self.jo
        eps = np.exp(s)
        ies = np.exp(-s)
        jac = 1.0 if jacobian else 0.0
        su, sv = u.sum(), v.sum()
        sib = ib.sum()
        # phi_i ~ LogNormal(Phi_j, eps_j)
        if J == 1:
            z = (u - Phi[0]) * ies[0]
            ssj = N * s[0]
        else:
            z = (u - Phi[jo]) * ies[jo]
            ssj = self._n_per_journal @ s
        zP = (Phi - p.Phi_mean) / p.Phi_sd
        lp = (self._const
              # beta_i ~ InvGamma
              - (p.beta_shape + 1.0 - jac) * sv - p.beta_scale * sib
              - (1.0 - jac) * su - ssj - 0.5 * (z @ z)
              # Phi_j ~ Normal
              - 0.5 * (zP @ zP)
              # epsilon_j ~ InvGamma, theta_j ~ Gamma(shape, rate)
              + (jac - p.epsilon_shape - 1.0) * s.sum() - p.epsilon_scale * ies.sum()
              + (p.theta_shape - 1.0 + jac) * w.sum() - p.theta_rate * theta.sum())
        if not need_grad:
            return lp, None
        g = np.empty(self.dim)
        if J == 1:
            zi = z * ies[0]
            g[2 * N] = zi.sum()
            g[2 * N + 1] = z @ z - N
        else:
            zi = z * ies[jo]
            g[2 * N:2 * N + J] = np.bincount(jo, weights=zi, minlength=J)
            g[2 * N + J:2 * N + 2 * J] = np.bincount(jo, weights=z * z, minlength=J) - self._n_per_journal
        g[:N] = jac - 1.0 - zi
        g[N:2 * N] = jac - (p.beta_shape + 1.0) + p.beta_scale * ib
        g[2 * N:2 * N + J] -= zP / p.Phi_sd
        g[2 * N + J:2 * N + 2 * J] += jac - (p.epsilon_shape + 1.0) + p.epsilon_scale * ies
        g[2 * N + 2 * J:] = (p.theta_shape - 1.0 + jac) - p.theta_rate * theta
        return lp, g

    def log_density_and_gradient(self, x, jacobian: bool = True, need_grad: bool = True):
        u, v, Phi, s, w = self.split(x)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ib, phi, theta = np.exp(-v), np.exp(u), np.exp(w)
            lp, g = self._prior(u, v, Phi, s, w, jacobian, need_grad, ib, theta)
            ll, gu, gv, gw = self._likelihood(u, v, w, need_grad, ib, phi, theta)
        total = lp + ll
        if not math.isfinite(total):
            total = -math.inf
        if not need_grad:
            return float(total), None
        N, J = self.N, self.J
        g[:N] += gu
        g[N:2 * N] += gv
        g[2 * N + 2 * J:] += gw
        return float(total), g


def _as_vector(params, data: SubsetData) -> np.ndarray:
    if isinstance(params, UnconstrainedParams):
        if params.log_phi.size != data.n_articles or params.Phi.size != data.n_journals:
            raise InputError("parameter dimensions do not match the subset")
        return params.to_vector()
    return np.asarray(params, dtype=float)


def log_posterior(data: SubsetData, params, priors: Priors | None = None, m: float = DEFAULT_M,
                  jacobian: bool = True) -> float:
    """Log-posterior density (unnormalised only in the evidence) at ``params``."""
    model = PosteriorModel(data, priors, m)
    return model.log_density(_as_vector(params, data), jacobian)


def log_posterior_gradient(data: SubsetData, params, priors: Priors | None = None,
                           m: float = DEFAULT_M, jacobian: bool = True) -> np.ndarray:
    """Analytic gradient of :func:`log_posterior` in unconstrained coordinates."""
    model = PosteriorModel(data, priors, m)
    return model.gradient(_as_vector(params, data), jacobian)


def subset_from_trajectories(trajectories: Sequence[CitationTrajectory], journal_id: str = "J0",
                             prefix: str = "A") -> SubsetData:
    """Single-journal subset from a list of trajectories."""
    arts = [SubsetArticle(f"{prefix}{k}", journal_id, tr) for k, tr in enumerate(trajectories)]
    return SubsetData([journal_id], arts)

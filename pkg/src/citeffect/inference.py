"""Posterior sampling, diagnostics and summaries for one subset."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .diagnostics import RHAT_WARNING, effective_sample_size, split_rhat
from .errors import InitializationError, InputError, NumericalError
from .likelihood import PosteriorModel, Priors, SubsetData
from .model import DEFAULT_M
from .nuts import run_chain

KINDS = ("phi", "beta", "Phi", "epsilon", "theta")


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 4
    n_iterations: int = 1000
    warmup_fraction: float = 0.5
    target_accept: float = 0.98
    max_tree_depth: int = 20
    seed: int = 0
    init_jitter: float = 0.5
    max_init_retries: int = 100
    jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise InputError("n_chains must be >= 1")
        if not 0 < self.warmup_fraction < 1:
            raise InputError("warmup_fraction must lie in (0, 1)")
        if not 0 < self.target_accept < 1:
            raise InputError("target_accept must lie in (0, 1)")
        if self.n_iterations < 2:
            raise InputError("n_iterations must be >= 2")

    @property
    def n_warmup(self) -> int:
        return int(round(self.n_iterations * self.warmup_fraction))

    @property
    def n_draws(self) -> int:
        return self.n_iterations - self.n_warmup


@dataclass
class PosteriorDraws:
    """Post-warmup draws of all constrained parameters.

    ``values`` has shape ``(n_chains, n_draws, dim)`` in the column order of
    ``names``; per-transition statistics have shape ``(n_chains, n_draws)``.
    """

    names: list[str]
    values: np.ndarray
    divergent: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    tree_depth: np.ndarray
    step_size: np.ndarray
    article_ids: list[str]
    journal_ids: list[str]
    article_journal: list[str]
    key: tuple | None = None
    warmup_divergent: int = 0

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_draws(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, :, self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def block(self, kind: str) -> np.ndarray:
        """All parameters of one kind, shape ``(n_chains, n_draws, n)``."""
        ids = self.article_ids if kind in ("phi", "beta") else self.journal_ids
        cols = [self.names.index(f"{kind}[{x}]") for x in ids]
        return self.values[:, :, cols]

    def pooled(self, name: str) -> np.ndarray:
        return self.column(name).reshape(-1)

    def article_draws(self, article_id: str) -> dict[str, np.ndarray]:
        """Pooled ``phi``, ``beta`` and the journal's ``theta`` for one article."""
        if article_id not in self.article_ids:
            raise KeyError(f"article {article_id} not in fit")
        j = self.article_journal[self.article_ids.index(article_id)]
        return {
            "phi": self.pooled(f"phi[{article_id}]"),
            "beta": self.pooled(f"beta[{article_id}]"),
            "theta": self.pooled(f"theta[{j}]"),
        }

    def to_csv(self, path) -> None:
        """One row per post-warmup iteration with chain, draw and sampler columns."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw", "divergent", "accept_stat", "n_leapfrog", "tree_depth"]
                       + self.names)
            for c in range(self.n_chains):
                for d in range(self.n_draws):
                    w.writerow([c, d, int(self.divergent[c, d]), repr(float(self.accept_stat[c, d])),
                                int(self.n_leapfrog[c, d]), int(self.tree_depth[c, d])]
                               + [repr(float(v)) for v in self.values[c, d]])
        meta = {
            "article_ids": self.article_ids, "journal_ids": self.journal_ids,
            "article_journal": self.article_journal,
            "key": list(self.key) if self.key else None,
            "step_size": [float(s) for s in self.step_size],
            "warmup_divergent": self.warmup_divergent,
        }
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def from_csv(cls, path) -> "PosteriorDraws":
        meta = json.loads(Path(str(path) + ".meta.json").read_text())
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = header[6:]
        arr = np.array([[float(v) for v in r] for r in body])
        n_chains = int(arr[:, 0].max()) + 1
        n_draws = int(arr[:, 1].max()) + 1
        shape = (n_chains, n_draws)
        return cls(
            names=names,
            values=arr[:, 6:].reshape(n_chains, n_draws, len(names)),
            divergent=arr[:, 2].reshape(shape).astype(bool),
            accept_stat=arr[:, 3].reshape(shape),
            n_leapfrog=arr[:, 4].reshape(shape).astype(int),
            tree_depth=arr[:, 5].reshape(shape).astype(int),
            step_size=np.array(meta["step_size"]),
            article_ids=meta["article_ids"], journal_ids=meta["journal_ids"],
            article_journal=meta["article_journal"],
            key=tuple(meta["key"]) if meta["key"] else None,
            warmup_divergent=meta["warmup_divergent"],
        )


def _prior_init(model: PosteriorModel, rng: np.random.Generator, jitter: float) -> np.ndarray:
    p = model.priors
    J, N = model.J, model.N
    Phi = rng.normal(p.Phi_mean, p.Phi_sd, J)
    eps = p.epsilon_scale / rng.gamma(p.epsilon_shape, 1.0, J)
    theta = rng.gamma(p.theta_shape, 1.0 / p.theta_rate, J)
    beta = p.beta_scale / rng.gamma(p.beta_shape, 1.0, N)
    log_phi = rng.normal(Phi[model.jo], eps[model.jo])
    x = np.concatenate([log_phi, np.log(beta), Phi, np.log(eps), np.log(theta)])
    return x + rng.uniform(-jitter, jitter, x.size)


def initial_point(model: PosteriorModel, rng: np.random.Generator, jitter: float = 0.5,
                  max_retries: int = 100) -> np.ndarray:
    """Jittered prior draw with a finite log density and gradient."""
    for _ in range(max_retries):
        x = _prior_init(model, rng, jitter)
        lp, g = model.log_density_and_gradient(x)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return x
    raise InitializationError(f"no finite starting point after {max_retries} prior draws")


def _run_one_chain(args):
    model, x0, config, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    return run_chain(model.log_density_and_gradient, x0, config.n_warmup, config.n_draws, rng,
                     target_accept=config.target_accept, max_tree_depth=config.max_tree_depth)


def sample_posterior(data: SubsetData, priors: Priors | None = None,
                     config: ChainConfig | None = None, m: float = DEFAULT_M,
                     init: np.ndarray | None = None) -> PosteriorDraws:
    """Run ``config.n_chains`` independent NUTS chains and keep post-warmup draws.

    Per-chain generators are spawned from ``config.seed`` so identical
    configurations give bit-identical draws, whatever ``config.jobs`` is.
    ``init`` optionally fixes the unconstrained starting point of every chain.
    """
    config = config or ChainConfig()
    if data.n_articles == 0 and data.n_journals == 0:
        raise InputError("empty subset")
    model = PosteriorModel(data, priors, m)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    tasks = []
    for s in seeds:
        init_seed, chain_seed = s.spawn(2)
        if init is None:
            x0 = initial_point(model, np.random.default_rng(init_seed), config.init_jitter,
                               config.max_init_retries)
        else:
            x0 = np.asarray(init, dtype=float)
            if not np.isfinite(model.log_density(x0)):
                raise InitializationError("supplied initial point has non-finite density")
        tasks.append((model, x0, config, chain_seed))
    if config.jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_one_chain, tasks))
    else:
        results = [_run_one_chain(t) for t in tasks]

    unc = np.stack([r.draws for r in results])
    values = np.empty_like(unc)
    N, J = model.N, model.J
    values[..., :2 * N] = np.exp(unc[..., :2 * N])
    values[..., 2 * N:2 * N + J] = unc[..., 2 * N:2 * N + J]
    values[..., 2 * N + J:] = np.exp(unc[..., 2 * N + J:])
    return PosteriorDraws(
        names=data.parameter_names(),
        values=values,
        divergent=np.stack([r.divergent for r in results]),
        accept_stat=np.stack([r.accept_stat for r in results]),
        n_leapfrog=np.stack([r.n_leapfrog for r in results]),
        tree_depth=np.stack([r.tree_depth for r in results]),
        step_size=np.array([r.step_size for r in results]),
        article_ids=[a.article_id for a in data.articles],
        journal_ids=list(data.journal_ids),
        article_journal=[a.journal_id for a in data.articles],
        key=data.key,
        warmup_divergent=sum(r.warmup_divergent for r in results),
    )


@dataclass
class Diagnostics:
    rhat: dict[str, float]
    ess: dict[str, float]
    n_divergent: int
    rhat_available: bool

    @property
    def excluded(self) -> bool:
        """Any post-warmup divergence excludes the subset."""
        return self.n_divergent > 0

    @property
    def max_rhat(self) -> float:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    @property
    def rhat_warning(self) -> bool:
        return self.rhat_available and self.max_rhat > RHAT_WARNING


def diagnostics(draws: PosteriorDraws) -> Diagnostics:
    """Split R-hat and ESS per parameter plus the post-warmup divergence count.

    R-hat needs at least two chains; with one chain every value is ``nan``
    and ``rhat_available`` is false.
    """
    rhat_ok = draws.n_chains >= 2
    rhat, ess = {}, {}
    for k, name in enumerate(draws.names):
        x = draws.values[:, :, k]
        rhat[name] = split_rhat(x) if rhat_ok else float("nan")
        ess[name] = effective_sample_size(x)
    return Diagnostics(rhat, ess, int(draws.divergent.sum()), rhat_ok)


@dataclass
class ParamSummary:
    median: float
    lower: float
    upper: float
    rhat: float = float("nan")
    ess: float = float("nan")


def percentile_summary(x, level: float = 0.95) -> tuple[float, float, float]:
    """Median and central percentile interval with linear interpolation."""
    x = np.asarray(x, dtype=float).reshape(-1)
    tail = 50.0 * (1.0 - level)
    lo, med, hi = np.percentile(x, [tail, 50.0, 100.0 - tail])
    return float(med), float(lo), float(hi)


@dataclass
class FitSummary:
    params: dict[str, ParamSummary]
    n_divergent: int
    excluded: bool
    max_rhat: float
    rhat_warning: bool
    key: tuple | None = None
    journal_ids: list[str] = field(default_factory=list)

    def journal(self, journal_id: str) -> dict[str, ParamSummary]:
        return {k: self.params[f"{k}[{journal_id}]"]
                for k in ("theta", "exp_Phi", "epsilon", "Phi", "effective_rate")}

    def to_dict(self) -> dict:
        return {
            "key": list(self.key) if self.key else None,
            "journal_ids": self.journal_ids,
            "n_divergent": self.n_divergent,
            "excluded": self.excluded,
            "max_rhat": self.max_rhat,
            "rhat_warning": self.rhat_warning,
            "params": {k: asdict(v) for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitSummary":
        return cls(
            params={k: ParamSummary(**v) for k, v in d["params"].items()},
            n_divergent=d["n_divergent"], excluded=d["excluded"], max_rhat=d["max_rhat"],
            rhat_warning=d["rhat_warning"], key=tuple(d["key"]) if d["key"] else None,
            journal_ids=d["journal_ids"])


def summarize(draws: PosteriorDraws, diag: Diagnostics | None = None) -> FitSummary:
    """Medians and 95% percentile intervals of every parameter.

    Adds per-journal ``exp_Phi`` (median latent rate) and ``effective_rate``
    (``exp(Phi) * theta``), both computed per draw before taking quantiles.
    """
    if draws.n_draws == 0:
        raise InputError("no draws to summarize")
    diag = diag or diagnostics(draws)
    params = {}
    for k, name in enumerate(draws.names):
        med, lo, hi = percentile_summary(draws.values[:, :, k])
        params[name] = ParamSummary(med, lo, hi, diag.rhat[name], diag.ess[name])
    for j in draws.journal_ids:
        exp_phi = np.exp(draws.column(f"Phi[{j}]"))
        rate = exp_phi * draws.column(f"theta[{j}]")
        params[f"exp_Phi[{j}]"] = ParamSummary(*percentile_summary(exp_phi))
        params[f"effective_rate[{j}]"] = ParamSummary(*percentile_summary(rate))
    return FitSummary(params, diag.n_divergent, diag.excluded, diag.max_rhat, diag.rhat_warning,
                      draws.key, list(draws.journal_ids))


@dataclass
class MapResult:
    x: np.ndarray
    params: dict[str, np.ndarray]
    log_density: float
    grad_norm: float
    converged: bool
    n_iterations: int
    message: str = ""


def _fd_hessian(model: PosteriorModel, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Symmetrised central-difference Hessian of the analytic gradient."""
    H = np.empty((x.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        H[:, k] = (model.gradient(x + e, jacobian=False) - model.gradient(x - e, jacobian=False)) / (2 * h)
    return 0.5 * (H + H.T)


def _newton_polish(model: PosteriorModel, x: np.ndarray, gtol: float, max_steps: int = 20):
    """Newton steps on the gradient alone, which stays accurate where the
    log density has run out of float64 resolution for a line search."""
    g = model.gradient(x, jacobian=False)
    for _ in range(max_steps):
        if not np.all(np.isfinite(g)) or np.max(np.abs(g)) <= gtol:
            break
        try:
            step = np.linalg.solve(_fd_hessian(model, x), -g)
        except np.linalg.LinAlgError:
            break
        t, best = 1.0, np.max(np.abs(g))
        while t > 1e-4:
            x_new = x + t * step
            g_new = model.gradient(x_new, jacobian=False)
            if np.all(np.isfinite(g_new)) and np.max(np.abs(g_new)) < best:
                x, g = x_new, g_new
                break
            t *= 0.5
        else:
            break
    return x


def map_estimate(data: SubsetData, priors: Priors | None = None, m: float = DEFAULT_M,
                 x0: np.ndarray | None = None, max_iter: int = 5000, gtol: float = 1e-9,
                 seed: int = 0) -> MapResult:
    """Posterior mode in the constrained parameterisation (no Jacobian terms).

    The search runs in unconstrained coordinates with L-BFGS and a line
    search, then Newton steps polish the point to the gradient tolerance.
    Without convergence the result is flagged and ``x`` falls back to a
    prior draw.
    """
    model = PosteriorModel(data, priors, m)
    if x0 is None:
        x0 = np.zeros(model.dim)
        N, J = model.N, model.J
        x0[N:2 * N] = math.log(model.priors.beta_mode)
        x0[2 * N + J:2 * N + 2 * J] = math.log(model.priors.epsilon_mode)
        x0[:N] = model.priors.Phi_mean

    def neg(x):
        lp, g = model.log_density_and_gradient(x, jacobian=False)
        if not np.isfinite(lp):
            return 1e300, np.zeros_like(x)
        return -lp, -g

    res = optimize.minimize(neg, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15,
                                     "maxcor": 30})
    x = res.x
    if np.all(np.isfinite(res.x)):
        x = _newton_polish(model, x, gtol=1e-7, max_steps=min(20, max_iter))
    lp, g = model.log_density_and_gradient(x, jacobian=False)
    grad_norm = float(np.max(np.abs(g)))
    converged = bool(np.isfinite(lp) and grad_norm <= 1e-6)
    if not converged:
        try:
            x = initial_point(model, np.random.default_rng(seed))
        except InitializationError as exc:
            raise NumericalError("MAP search failed and no prior fallback found") from exc
    N, J = model.N, model.J
    params = {
        "phi": np.exp(x[:N]), "beta": np.exp(x[N:2 * N]), "Phi": x[2 * N:2 * N + J].copy(),
        "epsilon": np.exp(x[2 * N + J:2 * N + 2 * J]), "theta": np.exp(x[2 * N + 2 * J:]),
    }
    return MapResult(x, params, float(lp), grad_norm, converged, int(res.nit), str(res.message))

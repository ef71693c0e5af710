"""Forward simulation of citation trajectories.

The simulator steps through every day with no shortcuts; it serves as the
brute-force reference for the expectation formulas and for recovery tests.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputError
from .model import DEFAULT_M, ArticleParams, JournalParams, decay_density, effective_rate

EPOCH = dt.date(2000, 1, 1)


@dataclass(frozen=True)
class CitationTrajectory:
    """Daily citation counts of one article.

    ``events`` holds ``(t, c)`` pairs with ``t`` the day offset from the
    preprint day and ``c >= 1``, strictly increasing in ``t``. Days without
    an event had zero citations.
    """

    preprint_day: dt.date
    publication_day: dt.date
    horizon_day: dt.date
    events: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        events = tuple((int(t), int(c)) for t, c in self.events)
        object.__setattr__(self, "events", events)
        if not self.preprint_day <= self.publication_day <= self.horizon_day:
            raise InputError(
                "need preprint_day <= publication_day <= horizon_day, got "
                f"{self.preprint_day}, {self.publication_day}, {self.horizon_day}")
        last = -1
        for t, c in events:
            if t <= last:
                raise InputError("event days must be strictly increasing")
            if c < 1:
                raise InputError(f"event counts must be >= 1, got {c} on day {t}")
            last = t
        if events and (events[0][0] < 0 or last > self.T):
            raise InputError(f"event outside observation window [0, {self.T}]")

    @property
    def T_prime(self) -> int:
        return (self.publication_day - self.preprint_day).days

    @property
    def T(self) -> int:
        return (self.horizon_day - self.preprint_day).days

    @property
    def n_pre(self) -> int:
        return sum(c for t, c in self.events if t <= self.T_prime)

    @property
    def n_post(self) -> int:
        return sum(c for t, c in self.events if t > self.T_prime)

    @property
    def total(self) -> int:
        return sum(c for _, c in self.events)

    def counts(self) -> np.ndarray:
        """Dense daily counts for days ``0..T``."""
        out = np.zeros(self.T + 1, dtype=np.int64)
        for t, c in self.events:
            out[t] = c
        return out

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.counts())

    def article(self, phi: float, beta: float) -> ArticleParams:
        return ArticleParams(phi=phi, beta=beta, T_prime=self.T_prime, T=self.T)

    def to_dict(self) -> dict:
        return {
            "preprint_day": self.preprint_day.isoformat(),
            "publication_day": self.publication_day.isoformat(),
            "horizon_day": self.horizon_day.isoformat(),
            "events": [list(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CitationTrajectory":
        try:
            return cls(
                preprint_day=dt.date.fromisoformat(d["preprint_day"]),
                publication_day=dt.date.fromisoformat(d["publication_day"]),
                horizon_day=dt.date.fromisoformat(d["horizon_day"]),
                events=tuple(tuple(e) for e in d.get("events", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"bad trajectory record: {exc}") from exc

    @classmethod
    def from_counts(cls, counts, preprint_day: dt.date, T_prime: int) -> "CitationTrajectory":
        counts = np.asarray(counts)
        nz = np.flatnonzero(counts)
        return cls(
            preprint_day=preprint_day,
            publication_day=preprint_day + dt.timedelta(days=int(T_prime)),
            horizon_day=preprint_day + dt.timedelta(days=len(counts) - 1),
            events=tuple((int(t), int(counts[t])) for t in nz),
        )


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_counts(article: ArticleParams, theta: float, m: float = DEFAULT_M,
                    seed=None) -> np.ndarray:
    """Daily counts ``c(0..T)`` drawn one day at a time."""
    rng = _rng(seed)
    days = np.arange(article.T + 1)
    g = effective_rate(days, article, theta) * decay_density(days, article.beta)
    counts = np.zeros(article.T + 1, dtype=np.int64)
    total = 0
    for t in range(article.T + 1):
        c = rng.poisson(g[t] * (m + total))
        counts[t] = c
        total += c
    return counts


def simulate_trajectory(article: ArticleParams, theta: float, m: float = DEFAULT_M,
                        seed=None, preprint_day: dt.date = EPOCH) -> CitationTrajectory:
    """Draw one trajectory; deterministic for a given integer ``seed``."""
    counts = simulate_counts(article, theta, m, seed)
    return CitationTrajectory.from_counts(counts, preprint_day, article.T_prime)


def simulate_cumulative_batch(article: ArticleParams, theta: float, m: float, n_reps: int,
                              rng: np.random.Generator, theta_per_rep=None, phi_per_rep=None,
                              beta_per_rep=None) -> np.ndarray:
    """``n_reps`` independent cumulative paths, shape ``(n_reps, T + 1)``.

    Replicates advance together day by day; per-replicate ``phi``, ``beta``
    and ``theta`` may be supplied (used for posterior predictive draws).
    """
    T, Tp = article.T, article.T_prime
    phi = np.full(n_reps, article.phi) if phi_per_rep is None else np.asarray(phi_per_rep, float)
    beta = np.full(n_reps, article.beta) if beta_per_rep is None else np.asarray(beta_per_rep, float)
    theta = np.full(n_reps, float(theta)) if theta_per_rep is None else np.asarray(theta_per_rep, float)
    f0 = -np.expm1(-1.0 / beta)
    out = np.empty((n_reps, T + 1))
    total = np.zeros(n_reps)
    for t in range(T + 1):
        rate = phi if t <= Tp else phi * theta
        g = rate * np.exp(-t / beta) * f0
        total = total + rng.poisson(g * (m + total))
        out[:, t] = total
    return out


def monte_carlo_mean_curve(article: ArticleParams, theta: float, m: float = DEFAULT_M,
                           n_reps: int = 10_000, seed=None):
    """Empirical per-day mean and unbiased variance of ``C(t)``.

    ``seed`` may be an int (one generator drives all replicates) or a
    sequence of ``n_reps`` per-replicate seeds passed to
    :func:`simulate_counts`.

    Returns
    -------
    mean, var : ndarray
        Arrays of length ``T + 1``.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    if seed is not None and not isinstance(seed, (int, np.integer, np.random.Generator)):
        seeds = list(seed)
        if len(seeds) != n_reps:
            raise ValueError("need one seed per replicate")
        paths = np.array([np.cumsum(simulate_counts(article, theta, m, s)) for s in seeds],
                         dtype=float)
    else:
        paths = simulate_cumulative_batch(article, theta, m, n_reps, _rng(seed))
    return paths.mean(axis=0), paths.var(axis=0, ddof=1)


@dataclass(frozen=True)
class SyntheticJournal:
    """Recipe for simulating one journal's articles.

    Preprint durations are drawn uniformly from the inclusive
    ``duration_range`` unless ``durations`` lists one per article. When
    ``db_end`` is set the horizon of each article runs to that date,
    otherwise it is ``horizon_days`` after the preprint day.
    Publication days are spread uniformly over ``year``.
    """

    journal_id: str
    params: JournalParams
    n_articles: int
    duration_range: tuple[int, int] = (30, 730)
    durations: tuple[int, ...] | None = None
    horizon_days: int = 5 * 365
    db_end: dt.date | None = None
    beta: float | None = None
    fields: tuple[str, ...] = ("Physics",)
    year: int = 2010

    def __post_init__(self):
        if self.n_articles < 1:
            raise InputError("n_articles must be >= 1")
        if self.durations is not None and len(self.durations) != self.n_articles:
            raise InputError("explicit durations need one entry per article")


class SimulatedArticle(NamedTuple):
    trajectory: CitationTrajectory
    phi: float
    beta: float
    journal_id: str


def draw_beta_prior(rng: np.random.Generator, shape: float = 2.0, scale: float = 3 * 365.0,
                    size=None):
    """Draw from InvGamma(shape, scale)."""
    return scale / rng.gamma(shape, 1.0, size=size)


def _durations(spec: SyntheticJournal, rng: np.random.Generator) -> np.ndarray:
    if spec.durations is None:
        lo, hi = spec.duration_range
        return rng.integers(lo, hi + 1, size=spec.n_articles)
    return np.asarray(spec.durations, dtype=int)


def simulate_journal(spec: SyntheticJournal, m: float = DEFAULT_M, seed=None) -> list[SimulatedArticle]:
    """Simulate all articles of a synthetic journal, recording the ground truth."""
    rng = _rng(seed)
    durations = _durations(spec, rng)
    phis = rng.lognormal(spec.params.Phi, spec.params.epsilon, size=spec.n_articles)
    betas = (np.full(spec.n_articles, spec.beta) if spec.beta is not None
             else draw_beta_prior(rng, size=spec.n_articles))
    year_start = dt.date(spec.year, 1, 1)
    year_len = (dt.date(spec.year + 1, 1, 1) - year_start).days
    pub_offsets = rng.integers(0, year_len, size=spec.n_articles)
    child_seeds = rng.integers(0, 2**63 - 1, size=spec.n_articles)
    out = []
    for k in range(spec.n_articles):
        pub = year_start + dt.timedelta(days=int(pub_offsets[k]))
        pre = pub - dt.timedelta(days=int(durations[k]))
        if spec.db_end is not None:
            T = (spec.db_end - pre).days
        else:
            T = spec.horizon_days
        if T < durations[k]:
            raise InputError(f"horizon ends before publication for article {k}")
        art = ArticleParams(phi=float(phis[k]), beta=float(betas[k]),
                            T_prime=int(durations[k]), T=int(T))
        traj = simulate_trajectory(art, spec.params.theta, m, int(child_seeds[k]), pre)
        out.append(SimulatedArticle(traj, art.phi, art.beta, spec.journal_id))
    return out


# ---------------------------------------------------------------------------
# Export in the ingest record format


def _arxiv_id(preprint_day: dt.date, serial: int, archive: str) -> str:
    yy, mm = preprint_day.year % 100, preprint_day.month
    if preprint_day.year < 2007:
        return f"{archive}/{yy:02d}{mm:02d}{serial:03d}"
    width = 4 if preprint_day.year < 2015 else 5
    return f"{yy:02d}{mm:02d}.{serial:0{width}d}"


@dataclass
class ExportedCorpus:
    directory: Path
    article_ids: list[str] = field(default_factory=list)
    n_references: int = 0


def export_corpus(journals: Sequence[tuple[SyntheticJournal, list[SimulatedArticle]]],
                  directory, db_end: dt.date, seed=0, m: float = DEFAULT_M) -> ExportedCorpus:
    """Write a simulated corpus as ingest input files plus ``truth.json``.

    Files: ``preprints.jsonl``, ``publications.jsonl``, ``references.jsonl``
    and ``truth.json``. Every citation becomes one citing publication and one
    reference string; reference strings alternate between arXiv identifiers,
    raw DOIs and resolver-matched DOIs so the parsing path is exercised.
    """
    rng = _rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    serials: dict[tuple, int] = {}
    preprints, publications, references, truth = [], [], [], []
    n_citing = 0
    result = ExportedCorpus(directory)
    for spec, articles in journals:
        archive = spec.fields[0].lower().replace(" ", "-")[:12] or "physics"
        for art in articles:
            traj = art.trajectory
            if traj.horizon_day > db_end:
                raise InputError("trajectory horizon runs past db_end")
            key = (traj.preprint_day.year, traj.preprint_day.month, archive
                   if traj.preprint_day.year < 2007 else "")
            serials[key] = serials.get(key, 0) + 1
            arxiv_id = _arxiv_id(traj.preprint_day, serials[key], archive)
            doi = f"10.5555/{spec.journal_id.lower()}.{len(preprints) + 1:06d}"
            preprints.append({
                "arxiv_id": arxiv_id,
                "doi": doi,
                "preprint_date": traj.preprint_day.isoformat(),
                "subjects": [f"{f} - General" for f in spec.fields],
            })
            publications.append({
                "doi": doi,
                "journal": spec.journal_id,
                "doc_type": "ar",
                "published_online": traj.publication_day.isoformat(),
                "issued": (traj.publication_day + dt.timedelta(days=30)).isoformat(),
            })
            truth.append({
                "arxiv_id": arxiv_id, "doi": doi, "journal": spec.journal_id,
                "phi": art.phi, "beta": art.beta, "theta": spec.params.theta,
                "Phi": spec.params.Phi, "epsilon": spec.params.epsilon,
                "fields": list(spec.fields), "year": spec.year,
                "trajectory": traj.to_dict(),
            })
            result.article_ids.append(arxiv_id)
            for t, c in traj.events:
                day = traj.preprint_day + dt.timedelta(days=t)
                for _ in range(c):
                    n_citing += 1
                    citing_doi = f"10.5555/citing.{n_citing:08d}"
                    publications.append({
                        "doi": citing_doi, "journal": "CITING", "doc_type": "ar",
                        "created": day.isoformat(),
                    })
                    style = rng.integers(0, 3)
                    if style == 0:
                        ident = arxiv_id if "/" in arxiv_id else f"arXiv:{arxiv_id}"
                        ref = {"raw": f"A. Author, preprint {ident} ({day.year})."}
                    elif style == 1:
                        ref = {"raw": f"A. Author, J. Synth. (2010), doi:{doi}."}
                    else:
                        ref = {"raw": f"A. Author, Synthetic Journal {spec.journal_id}", "doi": doi}
                    references.append({"citing_doi": citing_doi, **ref})
    _write_jsonl(directory / "preprints.jsonl", preprints)
    _write_jsonl(directory / "publications.jsonl", publications)
    _write_jsonl(directory / "references.jsonl", references)
    (directory / "truth.json").write_text(json.dumps(
        {"db_end": db_end.isoformat(), "m": m, "articles": truth}, indent=1))
    result.n_references = len(references)
    return result


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

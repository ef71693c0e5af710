"""Posterior predictive trajectories and journal-level result tables.

All outputs are plain data (CSV or JSON); nothing is rendered.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .inference import FitSummary, PosteriorDraws
from .model import DEFAULT_M
from .simulate import CitationTrajectory, simulate_cumulative_batch

QUANTITIES = ("theta", "exp_Phi", "epsilon", "effective_rate")


class ExcludedSubsetError(InputError):
    """Predictive output was requested from a subset with divergences."""


@dataclass
class PredictiveBands:
    """Per-day cumulative-citation bands for one article.

    ``samples`` has shape ``(n_samples, T + 1)``; ``observed`` is the
    article's own cumulative curve.
    """

    article_id: str
    days: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    samples: np.ndarray
    observed: np.ndarray

    def covers_final(self) -> bool:
        return bool(self.lower[-1] <= self.observed[-1] <= self.upper[-1])


def posterior_predictive(draws: PosteriorDraws, article_id: str, trajectory: CitationTrajectory,
                         m: float = DEFAULT_M, n_samples: int = 1000, seed=0, level: float = 0.95,
                         allow_excluded: bool = False) -> PredictiveBands:
    """Simulate the article's cumulative citations under posterior draws.

    Each sample takes one posterior draw of ``(phi, beta, theta)`` and runs
    the generative model over the observed timeline.

    Raises
    ------
    KeyError
        If the article was not part of the fit.
    ExcludedSubsetError
        If the fit had divergent transitions and ``allow_excluded`` is false.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if not allow_excluded and int(draws.divergent.sum()) > 0:
        raise ExcludedSubsetError(f"subset {draws.key} has divergent transitions")
    pars = draws.article_draws(article_id)
    rng = np.random.default_rng(seed)
    pool = pars["phi"].size
    idx = rng.choice(pool, size=n_samples, replace=n_samples > pool)
    article = trajectory.article(float(pars["phi"][0]), float(pars["beta"][0]))
    paths = simulate_cumulative_batch(article, 1.0, m, n_samples, rng,
                                      theta_per_rep=pars["theta"][idx],
                                      phi_per_rep=pars["phi"][idx],
                                      beta_per_rep=pars["beta"][idx])
    tail = 50.0 * (1.0 - level)
    lo, med, hi = np.percentile(paths, [tail, 50.0, 100.0 - tail], axis=0)
    return PredictiveBands(article_id, np.arange(trajectory.T + 1), med, lo, hi, paths,
                           trajectory.cumulative())


def write_bands_csv(path, bands: PredictiveBands, trajectory: CitationTrajectory) -> None:
    """Columns: day, date, observed, median, lower, upper."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "date", "observed", "median", "lower", "upper"])
        for t in bands.days:
            day = trajectory.preprint_day.toordinal() + int(t)
            w.writerow([int(t), _iso(day), int(bands.observed[t]), repr(float(bands.median[t])),
                        repr(float(bands.lower[t])), repr(float(bands.upper[t]))])


def _iso(ordinal: int) -> str:
    return dt.date.fromordinal(ordinal).isoformat()


# ---------------------------------------------------------------------------
# Journal tables


@dataclass(frozen=True)
class JournalResultRow:
    journal: str
    field: str | None
    year: int | None
    impact: float | None
    theta_median: float
    theta_lower: float
    theta_upper: float
    exp_Phi_median: float
    exp_Phi_lower: float
    exp_Phi_upper: float
    epsilon_median: float
    epsilon_lower: float
    epsilon_upper: float
    effective_rate_median: float
    effective_rate_lower: float
    effective_rate_upper: float

    def __post_init__(self):
        for q in QUANTITIES:
            lo, med, hi = (getattr(self, f"{q}_{s}") for s in ("lower", "median", "upper"))
            if not lo <= med <= hi:
                raise InputError(f"{self.journal}: {q} interval does not bracket its median")

    @property
    def impact_missing(self) -> bool:
        return self.impact is None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["impact_missing"] = self.impact_missing
        return d


ROW_COLUMNS = tuple(f.name for f in fields(JournalResultRow)) + ("impact_missing",)


def _sort_key(row: JournalResultRow):
    return (row.impact is None, row.impact if row.impact is not None else 0.0, row.journal,
            row.field or "", row.year or 0)


def journal_table(summaries: Iterable[FitSummary], impacts: Mapping[str, float],
                  include_excluded: bool = False) -> list[JournalResultRow]:
    """Join fit summaries with journal impacts, one row per journal and subset.

    Rows are sorted by impact; journals without an impact come last with
    ``impact=None``. Subsets flagged as excluded are skipped unless
    ``include_excluded`` is set.
    """
    rows = []
    for s in summaries:
        if s.excluded and not include_excluded:
            continue
        field, year = (s.key[0], int(s.key[1])) if s.key else (None, None)
        for j in s.journal_ids:
            p = s.journal(j)
            vals = {}
            for q in QUANTITIES:
                vals[f"{q}_median"] = p[q].median
                vals[f"{q}_lower"] = p[q].lower
                vals[f"{q}_upper"] = p[q].upper
            rows.append(JournalResultRow(j, field, year, impacts.get(j), **vals))
    return sorted(rows, key=_sort_key)


@dataclass(frozen=True)
class GroupSummary:
    """Spread of journal-level medians within one group."""

    n: int
    median: dict
    lower: dict
    upper: dict


def aggregate_by(rows: Sequence[JournalResultRow], key: str = "field",
                 level: float = 0.95) -> dict:
    """Median and central spread of journal-level medians per field or year."""
    if key not in ("field", "year"):
        raise InputError("aggregate key must be 'field' or 'year'")
    if not rows:
        raise InputError("no rows to aggregate")
    groups = defaultdict(list)
    for r in rows:
        groups[getattr(r, key)].append(r)
    tail = 50.0 * (1.0 - level)
    out = {}
    for g in sorted(groups, key=lambda x: (x is None, x)):
        members = groups[g]
        med, lo, hi = {}, {}, {}
        for q in QUANTITIES:
            x = np.array([getattr(r, f"{q}_median") for r in members])
            lo[q], med[q], hi[q] = (float(v) for v in np.percentile(x, [tail, 50.0, 100.0 - tail]))
        out[g] = GroupSummary(len(members), med, lo, hi)
    return out


def journal_averages(rows: Sequence[JournalResultRow]) -> list[JournalResultRow]:
    """Unweighted mean over subsets of each journal's medians and interval ends."""
    groups = defaultdict(list)
    for r in rows:
        groups[r.journal].append(r)
    out = []
    for j, members in groups.items():
        vals = {}
        for q in QUANTITIES:
            for s in ("median", "lower", "upper"):
                vals[f"{q}_{s}"] = float(np.mean([getattr(r, f"{q}_{s}") for r in members]))
        imps = [r.impact for r in members if r.impact is not None]
        out.append(JournalResultRow(j, None, None, float(np.mean(imps)) if imps else None, **vals))
    return sorted(out, key=_sort_key)


def write_rows_csv(path, rows: Sequence[JournalResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_COLUMNS)
        for r in rows:
            d = r.to_dict()
            w.writerow(["" if d[c] is None else d[c] for c in ROW_COLUMNS])


def write_rows_json(path, rows: Sequence[JournalResultRow]) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in rows], fh, indent=1, sort_keys=True)


def write_groups_json(path, groups: Mapping) -> None:
    payload = {str(k): asdict(v) for k, v in groups.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def multiplicative_ratios(bands: PredictiveBands) -> tuple[float, float]:
    """Final-day ``upper / median`` and ``median / lower`` (inf when lower is 0)."""
    med, lo, hi = bands.median[-1], bands.lower[-1], bands.upper[-1]
    up = hi / med if med > 0 else math.inf
    down = med / lo if lo > 0 else math.inf
    return float(up), float(down)

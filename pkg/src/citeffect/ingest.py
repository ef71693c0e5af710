"""Data preparation: reference parsing, dates, subjects, impacts and subsets.

Inputs are line-delimited JSON files in one directory:

``preprints.jsonl``
    ``arxiv_id``, ``preprint_date``, ``subjects`` (list of "Major - Minor"
    strings), optional ``doi``.
``publications.jsonl``
    ``doi``, ``journal``, ``doc_type`` and any of ``published_online``,
    ``published_print``, ``created``, ``issued``. Citing documents are
    publications too; their resolved date is the citation date.
``references.jsonl``
    ``citing_doi``, ``raw`` reference text, optional resolver-matched ``doi``.

All dates are ISO-8601 calendar days (``YYYY-MM-DD``).
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import InputError
from .likelihood import SubsetArticle, SubsetData
from .simulate import CitationTrajectory

log = logging.getLogger(__name__)

# Normative patterns, kept bit-identical.
ARXIV_PATTERN = (r"[a-zA-Z\-\.]+ ?/ ?[0-9]{7,}"
                 r"|[aA][rR][xX][iI][vV]:[0-1][0-9]([0][0-9]|[1][0-2])\.[0-9]{4,5}")
DOI_PATTERN = r"\b10\.[0-9]{4,}(\.[0-9]+)*/\S*\b"
MSC_PATTERN = r"^[0-9]{2}[A-Z-][0-9x-]{2}"

_ARXIV_RE = re.compile(ARXIV_PATTERN)
_DOI_RE = re.compile(DOI_PATTERN)
_MSC_RE = re.compile(MSC_PATTERN)

DATE_FIELDS = ("published_online", "published_print", "created", "issued")
IMPACT_DOC_TYPES = frozenset({"ar", "re"})
DEFAULT_SUBJECT_THRESHOLD = 1000
DEFAULT_MIN_ARTICLES = 20
DEFAULT_MIN_DURATION = 30
DEFAULT_YEARS = (2000, 2016)


def parse_date(value, what: str = "date") -> dt.date:
    """Strict ISO-8601 day parser."""
    if isinstance(value, dt.date):
        return value
    if not isinstance(value, str) or not re.fullmatch(r"\d{4}-\d{2}-\d{2}", value):
        raise InputError(f"{what}: expected YYYY-MM-DD, got {value!r}")
    try:
        return dt.date.fromisoformat(value)
    except ValueError as exc:
        raise InputError(f"{what}: invalid calendar day {value!r}") from exc


def _opt_date(value, what):
    return None if value is None else parse_date(value, what)


# ---------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class PreprintRecord:
    arxiv_id: str
    preprint_date: dt.date
    subjects: tuple[str, ...] = ()
    doi: str | None = None

    def __post_init__(self):
        if not self.arxiv_id:
            raise InputError("preprint record without arxiv_id")
        object.__setattr__(self, "preprint_date", parse_date(self.preprint_date, "preprint_date"))
        object.__setattr__(self, "subjects", tuple(self.subjects))

    @classmethod
    def from_dict(cls, d: Mapping) -> "PreprintRecord":
        try:
            return cls(d["arxiv_id"], d["preprint_date"], tuple(d.get("subjects", ())), d.get("doi"))
        except KeyError as exc:
            raise InputError(f"preprint record missing field {exc}") from exc


@dataclass(frozen=True)
class PublicationRecord:
    doi: str
    journal: str
    doc_type: str = "ar"
    published_online: dt.date | None = None
    published_print: dt.date | None = None
    created: dt.date | None = None
    issued: dt.date | None = None

    def __post_init__(self):
        if not self.doi:
            raise InputError("publication record without doi")
        for name in DATE_FIELDS:
            object.__setattr__(self, name, _opt_date(getattr(self, name), f"{self.doi}.{name}"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "PublicationRecord":
        try:
            return cls(d["doi"], d.get("journal", ""), d.get("doc_type", "ar"),
                       **{k: d.get(k) for k in DATE_FIELDS})
        except KeyError as exc:
            raise InputError(f"publication record missing field {exc}") from exc


@dataclass(frozen=True)
class ReferenceString:
    raw: str
    doi: str | None = None
    citing_doi: str | None = None

    def __post_init__(self):
        if not self.raw:
            raise InputError("reference with empty raw text")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReferenceString":
        try:
            return cls(d["raw"], d.get("doi"), d.get("citing_doi"))
        except KeyError as exc:
            raise InputError(f"reference record missing field {exc}") from exc


@dataclass(frozen=True, order=True)
class SubsetKey:
    field: str
    year: int

    def label(self) -> str:
        return f"{self.field.replace(' ', '_')}-{self.year}"


# ---------------------------------------------------------------------------
# Parsing


def _raw(ref) -> str:
    return ref.raw if isinstance(ref, ReferenceString) else str(ref)


def extract_arxiv_id(ref: ReferenceString | str) -> str | None:
    """Leftmost arXiv identifier in a reference string.

    New-style matches lose their ``arXiv:`` prefix and old-style matches
    lose the optional blanks around the slash, so the result compares equal
    to the identifier on the preprint record.
    """
    match = _ARXIV_RE.search(_raw(ref))
    if match is None:
        return None
    found = match.group(0)
    if found[:6].lower() == "arxiv:":
        return found[6:]
    return found.replace(" ", "")


def extract_doi(ref: ReferenceString | str) -> str | None:
    """Resolver-matched DOI if present, else the first DOI in the raw text."""
    if isinstance(ref, ReferenceString) and ref.doi:
        return ref.doi
    match = _DOI_RE.search(_raw(ref))
    return match.group(0) if match else None


def resolve_publication_date(rec: PublicationRecord) -> dt.date:
    """Earliest of the online, print, created and issued dates."""
    dates = [getattr(rec, k) for k in DATE_FIELDS if getattr(rec, k) is not None]
    if not dates:
        raise InputError(f"publication {rec.doi} has no date to resolve")
    return min(dates)


def is_msc(subject: str) -> bool:
    s = subject.strip()
    return bool(_MSC_RE.match(s)) or s.upper().startswith("MSC")


def major_subject(subject: str) -> str:
    return subject.split(" - ", 1)[0].strip()


def assign_subjects(preprints: Iterable[PreprintRecord],
                    threshold: int = DEFAULT_SUBJECT_THRESHOLD) -> dict[str, tuple[str, ...]]:
    """Major subjects per preprint, keeping subjects used by ``threshold`` preprints.

    Usage counts each preprint once per major subject. MSC codes never
    qualify. Preprints may end up with no subject.
    """
    if threshold < 1:
        raise InputError("subject threshold must be >= 1")
    majors = {}
    usage = Counter()
    for rec in preprints:
        ms = sorted({major_subject(s) for s in rec.subjects if s.strip() and not is_msc(s)})
        majors[rec.arxiv_id] = ms
        usage.update(ms)
    keep = {s for s, n in usage.items() if n >= threshold}
    return {a: tuple(s for s in ms if s in keep) for a, ms in majors.items()}


class CitationSplit(NamedTuple):
    pre: list
    post: list
    anomalies: list


def split_citations(events: Sequence[dt.date], publication_day: dt.date,
                    preprint_day: dt.date | None = None) -> CitationSplit:
    """Partition citation dates at the publication day (inclusive on the pre side).

    Dates before ``preprint_day`` go to ``anomalies`` and are logged.
    """
    pre, post, bad = [], [], []
    for day in events:
        if preprint_day is not None and day < preprint_day:
            bad.append(day)
        elif day <= publication_day:
            pre.append(day)
        else:
            post.append(day)
    if bad:
        log.warning("%d citation(s) dated before the preprint day %s", len(bad), preprint_day)
    return CitationSplit(pre, post, bad)


def compute_journal_impact(publications: Iterable[PublicationRecord],
                           citations: Mapping[str, Sequence[dt.date]], db_end: dt.date,
                           window_years: int = 5) -> dict[str, float]:
    """Mean in-window citations per article or review, by journal.

    The window is ``[pub, pub + 365 * window_years)`` and is truncated at
    ``db_end`` (inclusive). ``citations`` maps a publication DOI to its
    citation dates. Journals without a qualifying document are omitted.
    """
    span = dt.timedelta(days=365 * window_years)
    totals: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for rec in publications:
        if rec.doc_type not in IMPACT_DOC_TYPES:
            continue
        pub = resolve_publication_date(rec)
        end = min(pub + span, db_end + dt.timedelta(days=1))
        n = sum(1 for d in citations.get(rec.doi, ()) if pub <= d < end)
        acc = totals[rec.journal]
        acc[0] += n
        acc[1] += 1
    return {j: n / k for j, (n, k) in sorted(totals.items())}


# ---------------------------------------------------------------------------
# Corpus assembly


@dataclass
class Corpus:
    preprints: list[PreprintRecord]
    publications: list[PublicationRecord]
    references: list[ReferenceString]


def _read_jsonl(path: Path, factory) -> list:
    out = []
    if not path.exists():
        raise InputError(f"missing input file {path}")
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path.name}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                out.append(factory(d))
            except InputError as exc:
                raise InputError(f"{path.name}:{lineno}: {exc}") from exc
    return out


def load_corpus(directory) -> Corpus:
    d = Path(directory)
    return Corpus(
        _read_jsonl(d / "preprints.jsonl", PreprintRecord.from_dict),
        _read_jsonl(d / "publications.jsonl", PublicationRecord.from_dict),
        _read_jsonl(d / "references.jsonl", ReferenceString.from_dict),
    )


@dataclass
class IngestedArticle:
    """A preprint matched to its published version, with its citation days."""

    arxiv_id: str
    doi: str
    journal: str
    preprint_day: dt.date
    publication_day: dt.date
    subjects: tuple[str, ...]
    citations: list[dt.date] = field(default_factory=list)

    @property
    def duration(self) -> int:
        return (self.publication_day - self.preprint_day).days

    def split(self) -> CitationSplit:
        return split_citations(sorted(self.citations), self.publication_day, self.preprint_day)

    def trajectory(self, horizon_day: dt.date) -> CitationTrajectory:
        counts = Counter((d - self.preprint_day).days for d in self.citations
                         if self.preprint_day <= d <= horizon_day)
        return CitationTrajectory(self.preprint_day, self.publication_day, horizon_day,
                                  tuple(sorted(counts.items())))


@dataclass
class IngestResult:
    articles: list[IngestedArticle]
    impacts: dict[str, float]
    n_references: int
    n_unresolved_references: int
    n_anomalies: int


def ingest_corpus(corpus: Corpus, db_end: dt.date, subject_threshold: int = DEFAULT_SUBJECT_THRESHOLD,
                  window_years: int = 5) -> IngestResult:
    """Match preprints to publications and attach dated citations.

    A reference is attributed by its arXiv identifier when that names a known
    preprint, otherwise by its DOI. Citations of the preprint and of the
    published version are pooled and split by date only.
    """
    pubs = {}
    for rec in corpus.publications:
        if rec.doi in pubs:
            raise InputError(f"duplicate publication doi {rec.doi}")
        pubs[rec.doi] = rec
    by_arxiv = {}
    for rec in corpus.preprints:
        if rec.arxiv_id in by_arxiv:
            raise InputError(f"duplicate preprint {rec.arxiv_id}")
        by_arxiv[rec.arxiv_id] = rec
    doi_to_arxiv = {p.doi: p.arxiv_id for p in corpus.preprints if p.doi}
    citations: dict[str, list[dt.date]] = defaultdict(list)   # keyed by DOI or arXiv id
    unresolved = 0
    for ref in corpus.references:
        citing = pubs.get(ref.citing_doi)
        if citing is None:
            unresolved += 1
            continue
        day = resolve_publication_date(citing)
        arxiv = extract_arxiv_id(ref)
        if arxiv is not None and arxiv in by_arxiv:
            target = by_arxiv[arxiv].doi or arxiv
        else:
            target = extract_doi(ref)
            if target is None:
                continue
        citations[target].append(day)
    subjects = assign_subjects(corpus.preprints, subject_threshold)
    articles, n_bad = [], 0
    for rec in sorted(corpus.preprints, key=lambda r: r.arxiv_id):
        pub = pubs.get(rec.doi) if rec.doi else None
        if pub is None:
            continue
        art = IngestedArticle(rec.arxiv_id, rec.doi, pub.journal, rec.preprint_date,
                              resolve_publication_date(pub), subjects[rec.arxiv_id],
                              sorted(citations.get(rec.doi, []) + citations.get(rec.arxiv_id, [])))
        n_bad += len(art.split().anomalies)
        articles.append(art)
    impacts = compute_journal_impact(corpus.publications, citations, db_end, window_years)
    return IngestResult(articles, impacts, len(corpus.references), unresolved, n_bad)


def build_subsets(articles: Iterable[IngestedArticle], db_end: dt.date,
                  min_articles: int = DEFAULT_MIN_ARTICLES,
                  min_duration: int = DEFAULT_MIN_DURATION,
                  years: tuple[int, int] = DEFAULT_YEARS,
                  fields: Sequence[str] | None = None,
                  ) -> dict[SubsetKey, dict[str, list[IngestedArticle]]]:
    """Group articles per (field, publication year) and journal.

    Only articles with a preprint duration of at least ``min_duration`` days
    are kept, and a journal enters a subset when it keeps at least
    ``min_articles`` of them. Articles with several subjects appear once per
    subject. The result is sorted and independent of input order.
    """
    groups: dict[SubsetKey, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for art in articles:
        year = art.publication_day.year
        if art.duration < min_duration or art.publication_day > db_end:
            continue
        if not years[0] <= year <= years[1]:
            continue
        for subject in art.subjects:
            if fields is None or subject in fields:
                groups[SubsetKey(subject, year)][art.journal].append(art)
    out = {}
    for key in sorted(groups):
        journals = {j: sorted(arts, key=lambda a: a.arxiv_id)
                    for j, arts in sorted(groups[key].items()) if len(arts) >= min_articles}
        if journals:
            out[key] = journals
    return out


def subset_data(key: SubsetKey, journals: Mapping[str, Sequence[IngestedArticle]],
                db_end: dt.date) -> SubsetData:
    arts = [SubsetArticle(a.arxiv_id, j, a.trajectory(db_end))
            for j, lst in journals.items() for a in lst]
    return SubsetData(list(journals), arts, key=(key.field, key.year))


# ---------------------------------------------------------------------------
# Outputs


def write_impacts_csv(path, impacts: Mapping[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["journal", "impact"])
        for j in sorted(impacts):
            w.writerow([j, repr(float(impacts[j]))])


def read_impacts_csv(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {row["journal"]: float(row["impact"]) for row in csv.DictReader(fh)}


MANIFEST_COLUMNS = ("field", "year", "journal", "arxiv_id", "doi", "preprint_date",
                    "publication_date", "T_prime", "n_pre", "n_post")


def write_subset_manifest(path, subsets: Mapping[SubsetKey, Mapping[str, Sequence[IngestedArticle]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for key, journals in subsets.items():
            for j, arts in journals.items():
                for a in arts:
                    s = a.split()
                    w.writerow([key.field, key.year, j, a.arxiv_id, a.doi, a.preprint_day.isoformat(),
                                a.publication_day.isoformat(), a.duration, len(s.pre), len(s.post)])


def write_subsets_jsonl(path, subsets, db_end: dt.date) -> None:
    with open(path, "w") as fh:
        for key, journals in subsets.items():
            for j, arts in journals.items():
                for a in arts:
                    row = {"field": key.field, "year": key.year, "journal": j,
                           "article_id": a.arxiv_id, "trajectory": a.trajectory(db_end).to_dict()}
                    fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_subsets_jsonl(path) -> dict[SubsetKey, SubsetData]:
    """Reload the fitting inputs written by :func:`write_subsets_jsonl`."""
    rows: dict[SubsetKey, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for d in _read_jsonl(Path(path), lambda d: d):
        try:
            key = SubsetKey(d["field"], int(d["year"]))
            traj = CitationTrajectory.from_dict(d["trajectory"])
            rows[key][d["journal"]].append(SubsetArticle(d["article_id"], d["journal"], traj))
        except KeyError as exc:
            raise InputError(f"subset record missing field {exc}") from exc
    return {k: SubsetData(list(v), [a for arts in v.values() for a in arts], key=(k.field, k.year))
            for k, v in sorted(rows.items())}

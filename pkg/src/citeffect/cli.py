"""Command-line entry point: ``citeffect {simulate,ingest,fit,report}``.

Every command takes ``--seed``, ``--config`` (a JSON file), ``--out`` (the
run directory) and ``--jobs``. Each run directory gets a ``manifest.json``
with the resolved configuration and SHA-256 digests of the files written.

Exit codes: 0 success, 2 input errors, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import ingest as ing
from .errors import InputError, NumericalError
from .inference import ChainConfig, FitSummary, PosteriorDraws, diagnostics, sample_posterior, summarize
from .likelihood import Priors
from .model import DEFAULT_M, JournalParams
from .report import (aggregate_by, journal_averages, journal_table, posterior_predictive,
                     write_bands_csv, write_groups_json, write_rows_csv, write_rows_json)
from .simulate import SyntheticJournal, export_corpus, simulate_journal

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("citeffect")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict) -> None:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "config": config,
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _date(cfg: dict, key: str) -> dt.date:
    if key not in cfg:
        raise InputError(f"config is missing '{key}'")
    return ing.parse_date(cfg[key], key)


def _build(cls, cfg: dict | None, what: str):
    try:
        return cls(**(cfg or {}))
    except TypeError as exc:
        raise InputError(f"bad {what} configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args, cfg: dict) -> dict:
    """Simulate journals and export a corpus plus ``truth.json``.

    Config keys: ``db_end`` (ISO day), ``m``, and ``journals``, a list of
    objects with ``id``, ``theta``, ``Phi``, ``epsilon``, ``n_articles`` and
    optional ``duration_range``, ``beta``, ``fields``, ``year``.
    """
    db_end = _date(cfg, "db_end")
    m = float(cfg.get("m", DEFAULT_M))
    journals = cfg.get("journals")
    if not journals:
        raise InputError("config lists no journals")
    root = np.random.SeedSequence(args.seed)
    children = root.spawn(len(journals) + 1)
    pairs = []
    for j, child in zip(journals, children):
        try:
            spec = SyntheticJournal(
                journal_id=j["id"],
                params=JournalParams(Phi=float(j["Phi"]), epsilon=float(j["epsilon"]),
                                     theta=float(j["theta"])),
                n_articles=int(j["n_articles"]),
                duration_range=tuple(j.get("duration_range", (30, 730))),
                db_end=db_end, beta=j.get("beta"),
                fields=tuple(j.get("fields", ("Physics",))), year=int(j.get("year", 2010)),
            )
        except KeyError as exc:
            raise InputError(f"journal entry missing {exc}") from exc
        pairs.append((spec, simulate_journal(spec, m, np.random.default_rng(child))))
    export_corpus(pairs, args.out / "corpus", db_end, np.random.default_rng(children[-1]), m)
    return {"db_end": db_end.isoformat(), "m": m, "journals": journals}


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args, cfg: dict) -> dict:
    """Parse records into impacts, a subset manifest and fitting inputs."""
    if args.input is None:
        raise InputError("ingest needs --input (directory with the JSONL record files)")
    db_end = _date(cfg, "db_end")
    threshold = int(cfg.get("subject_threshold", ing.DEFAULT_SUBJECT_THRESHOLD))
    min_articles = int(cfg.get("min_articles", ing.DEFAULT_MIN_ARTICLES))
    min_duration = int(cfg.get("min_duration", ing.DEFAULT_MIN_DURATION))
    years = tuple(cfg.get("years", ing.DEFAULT_YEARS))
    fields = cfg.get("fields")
    corpus = ing.load_corpus(args.input)
    result = ing.ingest_corpus(corpus, db_end, threshold, int(cfg.get("window_years", 5)))
    subsets = ing.build_subsets(result.articles, db_end, min_articles, min_duration, years, fields)
    out = args.out
    ing.write_impacts_csv(out / "impacts.csv", result.impacts)
    ing.write_subset_manifest(out / "subsets.csv", subsets)
    ing.write_subsets_jsonl(out / "subsets.jsonl", subsets, db_end)
    stats = {
        "n_preprints": len(corpus.preprints),
        "n_matched_articles": len(result.articles),
        "n_references": result.n_references,
        "n_unresolved_references": result.n_unresolved_references,
        "n_citation_anomalies": result.n_anomalies,
        "subsets": {k.label(): {j: len(a) for j, a in v.items()} for k, v in subsets.items()},
    }
    (out / "ingest_summary.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    return {"input": str(args.input), "db_end": db_end.isoformat(), "subject_threshold": threshold,
            "min_articles": min_articles, "min_duration": min_duration, "years": list(years),
            "fields": fields, "window_years": int(cfg.get("window_years", 5))}


# ---------------------------------------------------------------------------
# fit


def _subset_seed(root: int, label: str) -> int:
    # independent of which other subsets exist, so reruns and resumes agree
    ss = np.random.SeedSequence([int(root), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _fit_one(task):
    label, data, priors, chain_cfg, m, directory = task
    draws = sample_posterior(data, priors, chain_cfg, m)
    diag = diagnostics(draws)
    summary = summarize(draws, diag)
    directory.mkdir(parents=True, exist_ok=True)
    draws.to_csv(directory / "draws.csv")
    # summary.json is written last: its presence marks a finished fit
    (directory / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1, sort_keys=True) + "\n")
    return label, summary


def cmd_fit(args, cfg: dict) -> dict:
    """Fit every subset separately; skip subsets that already have a summary."""
    if args.input is None:
        raise InputError("fit needs --input (an ingest run directory)")
    subsets = ing.read_subsets_jsonl(Path(args.input) / "subsets.jsonl")
    if not subsets:
        raise InputError("no subsets to fit")
    m = float(cfg.get("m", DEFAULT_M))
    priors = _build(Priors, cfg.get("priors"), "priors")
    chain_kw = dict(cfg.get("chains", {}))
    chain_kw.pop("seed", None)
    chain_kw.pop("jobs", None)
    tasks, done = [], {}
    for key, data in subsets.items():
        label = key.label()
        directory = args.out / "fits" / label
        if (directory / "summary.json").exists():
            done[label] = FitSummary.from_dict(json.loads((directory / "summary.json").read_text()))
            log.info("skipping %s (already fitted)", label)
            continue
        chain_cfg = _build(ChainConfig, {**chain_kw, "seed": _subset_seed(args.seed, label)}, "chains")
        tasks.append((label, data, priors, chain_cfg, m, directory))
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            finished = list(pool.map(_fit_one, tasks))
    else:
        finished = [_fit_one(t) for t in tasks]
    done.update(dict(finished))
    excluded = {label: s.n_divergent for label, s in sorted(done.items()) if s.excluded}
    (args.out / "excluded.json").write_text(json.dumps(excluded, indent=1, sort_keys=True) + "\n")
    for label, n in excluded.items():
        print(f"excluded {label}: {n} divergent transition(s)")
    return {"input": str(args.input), "m": m, "priors": vars(priors), "chains": chain_kw}


# ---------------------------------------------------------------------------
# report


def cmd_report(args, cfg: dict) -> dict:
    """Journal tables, field and year aggregates and predictive bands.

    Config keys: ``impacts`` (CSV path, default from the ingest run the fit
    used), ``articles`` (ids to draw predictive bands for), ``n_samples``,
    ``include_excluded``.
    """
    if args.input is None:
        raise InputError("report needs --input (a fit run directory)")
    fit_dir = Path(args.input)
    fit_manifest = json.loads((fit_dir / "manifest.json").read_text()) if (
        fit_dir / "manifest.json").exists() else {}
    ingest_dir = Path(fit_manifest.get("config", {}).get("input", fit_dir))
    impacts_path = Path(cfg.get("impacts", ingest_dir / "impacts.csv"))
    impacts = ing.read_impacts_csv(impacts_path) if impacts_path.exists() else {}
    include_excluded = bool(cfg.get("include_excluded", False))
    summaries = {}
    for path in sorted((fit_dir / "fits").glob("*/summary.json")):
        summaries[path.parent.name] = FitSummary.from_dict(json.loads(path.read_text()))
    if not summaries:
        raise InputError(f"no fit summaries under {fit_dir / 'fits'}")
    rows = journal_table(summaries.values(), impacts, include_excluded)
    out = args.out
    write_rows_csv(out / "journal_table.csv", rows)
    write_rows_json(out / "journal_table.json", rows)
    write_rows_csv(out / "journal_averages.csv", journal_averages(rows))
    if rows:
        write_groups_json(out / "aggregate_field.json", aggregate_by(rows, "field"))
        write_groups_json(out / "aggregate_year.json", aggregate_by(rows, "year"))
    wanted = list(cfg.get("articles", []))
    m = float(fit_manifest.get("config", {}).get("m", cfg.get("m", DEFAULT_M)))
    if wanted:
        subsets = ing.read_subsets_jsonl(ingest_dir / "subsets.jsonl")
        n_samples = int(cfg.get("n_samples", 1000))
        (out / "predictive").mkdir(exist_ok=True)
        for k, art_id in enumerate(wanted):
            hit = None
            for key, data in subsets.items():
                for a in data.articles:
                    if a.article_id == art_id:
                        hit = (key, a)
                        break
                if hit:
                    break
            if hit is None:
                raise InputError(f"unknown article id {art_id}")
            key, a = hit
            draws = PosteriorDraws.from_csv(fit_dir / "fits" / key.label() / "draws.csv")
            bands = posterior_predictive(draws, art_id, a.trajectory, m, n_samples,
                                         seed=np.random.SeedSequence([args.seed, k]),
                                         allow_excluded=include_excluded)
            safe = art_id.replace("/", "_")
            write_bands_csv(out / "predictive" / f"{safe}.csv", bands, a.trajectory)
    return {"input": str(args.input), "impacts": str(impacts_path), "articles": wanted,
            "n_samples": int(cfg.get("n_samples", 1000)), "include_excluded": include_excluded}


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "fit": cmd_fit, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citeffect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        p.add_argument("--out", type=Path, required=True, help="run directory")
        p.add_argument("--jobs", type=int, default=None, help="parallel workers (default 1)")
        if name != "simulate":
            p.add_argument("--input", type=Path, help="upstream directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        args.seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        args.jobs = int(args.jobs if args.jobs is not None else cfg.get("jobs", 1))
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {args.out}: {exc}") from exc
        resolved = COMMANDS[args.command](args, cfg)
        resolved["seed"] = args.seed
        _write_manifest(args.out, args.command, resolved)
    except (InputError, OSError) as exc:
        print(f"citeffect {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"citeffect {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end pipeline stages behind the CLI subcommands.

Every stage writes its files through :class:`RunRecorder`, which writes
to a temporary name and renames into place, then records a SHA-256 digest
in the stage manifest. Nothing written to the output directory depends on
wall-clock time, so reruns with the same inputs and seed are byte-identical.
Stage timings stay on the in-memory report and in the INFO log.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from . import __version__
from .config import PipelineConfig
from .graph import detect_communities, emit_graph, threshold_graph
from .ingest import Dataset, anonymize_engines, dataset_summary, load_detections, write_alias_map
from .matrices import (
    build_category_counts,
    build_class_matrix,
    build_engine_matrix,
    class_frequency,
    detection_histogram,
    pearson_correlation,
    write_correlation,
    write_triplets,
)
from .minhash import MinHashConfig, group_signatures, write_group_report
from .normalize import (
    CATEGORIES,
    NormalizedDetection,
    RuleSet,
    clean_signature,
    load_stopwords,
    normalize_dataset,
    write_normalized,
)
from .sem import FitOptions, fit_categories, load_model, save_model, score_apps

log = logging.getLogger(__name__)

MODEL_FILES = {
    "Adware": "model_adware.json",
    "HarmfulThreats": "model_harmful.json",
    "UnknownGeneric": "model_unknown.json",
}
SCORE_HEADER = ("app_id", "z_adware", "z_harmful", "z_unknown", "p_adware", "p_harmful", "p_unknown")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunReport:
    command: str
    timings: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    def manifest(self) -> dict:
        return {"command": self.command, "version": __version__, "counts": self.counts, "files": self.files}


class RunRecorder:
    def __init__(self, out_dir: str | Path, command: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.report = RunReport(command)

    @contextmanager
    def file(self, name: str) -> Iterator[Path]:
        """Yield a temporary path; on success rename it to ``name`` and record its digest."""
        final = self.out_dir / name
        tmp = final.with_name(f".{final.name}.tmp{os.getpid()}")
        try:
            yield tmp
            os.replace(tmp, final)
        finally:
            if tmp.exists():
                tmp.unlink()
        self.report.files[name] = sha256_file(final)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.report.timings[name] = round(time.perf_counter() - start, 6)

    def write_json(self, name: str, doc) -> None:
        with self.file(name) as tmp:
            tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def finish(self) -> RunReport:
        report = self.report
        manifest_name = f"{report.command}.manifest.json"
        _atomic_text(self.out_dir / manifest_name, json.dumps(report.manifest(), indent=1, sort_keys=True) + "\n")
        for name, secs in report.timings.items():
            log.info("%s: stage %s took %.3fs", report.command, name, secs)
        doc = {
            "command": report.command,
            "counts": report.counts,
            "summary": report.summary,
            "manifest": manifest_name,
        }
        _atomic_text(self.out_dir / f"{report.command}.report.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return report


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def verify_manifest(out_dir: str | Path, manifest: str | Path) -> list[str]:
    """Names of files whose current digest differs from the manifest (or are missing)."""
    out_dir = Path(out_dir)
    doc = json.loads(Path(manifest).read_text("utf-8"))
    bad = []
    for name, digest in doc["files"].items():
        path = out_dir / name
        if not path.exists() or sha256_file(path) != digest:
            bad.append(name)
    return bad


@dataclass
class Loaded:
    ds: Dataset
    rules: RuleSet
    stopwords: frozenset[str]
    alias_map: dict[str, str] | None = None


def _load(cfg: PipelineConfig, rec: RunRecorder, allow_empty: bool = False) -> Loaded:
    if cfg.input is None:
        raise ValueError("no --input given")
    with rec.stage("load"):
        ds = load_detections(cfg.input, cfg.format, cfg.sep, allow_empty=allow_empty)
        rules = RuleSet.from_file(cfg.rules)
        stopwords = load_stopwords(cfg.stopwords)
        alias_map = None
        if cfg.anonymize:
            ds, alias_map = anonymize_engines(ds, cfg.salt)
    rec.report.counts["records"] = len(ds)
    rec.report.counts["apps"] = ds.n_apps
    rec.report.counts["engines"] = ds.n_engines
    return Loaded(ds, rules, stopwords, alias_map)


def _normalized(loaded: Loaded, rec: RunRecorder) -> list[NormalizedDetection]:
    with rec.stage("normalize"):
        nd = normalize_dataset(loaded.ds, loaded.rules, loaded.stopwords)
    rec.report.counts["normalized"] = len(nd)
    return nd


def _write_rows(rec: RunRecorder, name: str, header, rows) -> None:
    with rec.file(name) as tmp, tmp.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_normalize(cfg: PipelineConfig, rec: RunRecorder | None = None) -> RunReport:
    """Normalized detections, minhash grouping report, token-frequency table."""
    own = rec is None
    rec = rec or RunRecorder(cfg.out_dir, "normalize")
    loaded = _load(cfg, rec, allow_empty=True)
    nd = _normalized(loaded, rec)
    with rec.stage("write_normalized"), rec.file("normalized.csv") as tmp:
        write_normalized(nd, tmp)
    if loaded.alias_map is not None:
        with rec.file("alias_map.csv") as tmp:
            write_alias_map(loaded.alias_map, tmp)

    with rec.stage("minhash_groups"):
        freq = Counter(r.raw_signature for r in loaded.ds.records)
        distinct = list(freq)
        corpus = [clean_signature(s, loaded.stopwords) for s in distinct]
        counts = [freq[s] for s in distinct]
        mh = MinHashConfig(cfg.k, cfg.shingle_width, cfg.seed)
        groups = group_signatures(corpus, mh, cfg.bands, cfg.rows, counts=counts) if corpus else []
        with rec.file("groups.jsonl") as tmp:
            write_group_report(groups, corpus, tmp, counts=counts)
    rec.report.counts["distinct_signatures"] = len(distinct)
    rec.report.counts["groups"] = len(groups)

    with rec.stage("token_frequency"):
        tokens: Counter = Counter()
        for ts, n in zip(corpus, counts):
            for t in ts.tokens:
                tokens[t] += n
        _write_rows(rec, "token_frequency.csv", ("token", "count"), sorted(tokens.items(), key=lambda kv: (-kv[1], kv[0])))
    rec.report.counts["distinct_tokens"] = len(tokens)
    return rec.finish() if own else rec.report


_ZERO_SUMMARY = {
    "n_apps": 0,
    "n_engines": 0,
    "n_signatures": 0,
    "mean_detections_per_app": 0.0,
    "sd_detections_per_app": 0.0,
    "detections_histogram": {},
    "per_engine_counts": {},
}


def cmd_stats(cfg: PipelineConfig, rec: RunRecorder | None = None) -> RunReport:
    """Summary statistics, detection histogram, class frequencies, matrices A/B/D."""
    own = rec is None
    rec = rec or RunRecorder(cfg.out_dir, "stats")
    loaded = _load(cfg, rec, allow_empty=True)
    ds = loaded.ds
    nd = _normalized(loaded, rec)
    with rec.stage("summary"):
        summary = dataset_summary(ds).to_dict() if len(ds) else dict(_ZERO_SUMMARY)
        rec.write_json("summary.json", summary)
    rec.report.summary = {k: summary[k] for k in ("n_apps", "n_engines", "n_signatures", "mean_detections_per_app", "sd_detections_per_app")}

    with rec.stage("matrices"):
        a = build_engine_matrix(ds)
        b = build_class_matrix(nd, loaded.rules, ds.app_index)
        d = build_category_counts(nd, ds.app_index)
        for name, m in (("matrix_A", a), ("matrix_B", b), ("matrix_D", d)):
            with rec.file(f"{name}.csv") as tmp, rec.file(f"{name}.labels.json") as side:
                write_triplets(m, tmp, side)
        hist = detection_histogram(a)
        _write_rows(rec, "detection_histogram.csv", ("engines_flagging", "apps"), sorted(hist.items()))
        _write_rows(rec, "class_frequency.csv", ("class", "category", "apps"),
                    [(c, loaded.rules.class_category[c].value, n) for c, n in class_frequency(b).items()])
        if d.shape[0] >= 2:
            with rec.file("corr_D.csv") as tmp:
                write_correlation(pearson_correlation(d), tmp)
    rec.report.counts["multi_class_apps"] = int((b.row_sums() > 1).sum()) if b.shape[0] else 0
    return rec.finish() if own else rec.report


def _threshold_tag(t: float) -> str:
    # shortest round-trip repr: distinct thresholds never share file names
    return str(float(t))


def cmd_communities(cfg: PipelineConfig, rec: RunRecorder | None = None) -> RunReport:
    """Class correlation matrix plus one graph and partition per threshold."""
    own = rec is None
    rec = rec or RunRecorder(cfg.out_dir, "communities")
    loaded = _load(cfg, rec)
    nd = _normalized(loaded, rec)
    with rec.stage("correlation"):
        b = build_class_matrix(nd, loaded.rules, loaded.ds.app_index)
        corr = pearson_correlation(b)
        with rec.file("corr_B.csv") as tmp:
            write_correlation(corr, tmp)
    for t in sorted(set(cfg.corr_min)):
        tag = _threshold_tag(t)
        with rec.stage(f"communities_{tag}"):
            g = threshold_graph(corr, t)
            part = detect_communities(g)
            for fmt in ("json", "dot"):
                with rec.file(f"graph_{tag}.{fmt}") as tmp:
                    emit_graph(g, part, tmp, fmt)
            _write_rows(rec, f"communities_{tag}.csv", ("class", "community"),
                        [(n, k) for k, comm in enumerate(part.communities) for n in comm])
        rec.report.counts[f"edges_{tag}"] = len(g.edges)
        rec.report.counts[f"communities_{tag}"] = len(part.communities)
        rec.report.summary[f"modularity_{tag}"] = part.modularity
    return rec.finish() if own else rec.report


def cmd_fit(cfg: PipelineConfig, rec: RunRecorder | None = None) -> RunReport:
    own = rec is None
    rec = rec or RunRecorder(cfg.out_dir, "fit")
    loaded = _load(cfg, rec)
    nd = _normalized(loaded, rec)
    opts = FitOptions(cfg.max_iters, cfg.tol, cfg.seed, cfg.standardize)
    with rec.stage("fit"):
        models = fit_categories(nd, opts, engines=loaded.ds.engines)
    for cat, model in models.items():
        with rec.file(MODEL_FILES[cat.value]) as tmp:
            save_model(model, tmp)
        rec.report.summary[f"residual_{cat.value}"] = model.fit_residual
        rec.report.counts[f"iterations_{cat.value}"] = model.n_iter
    return rec.finish() if own else rec.report


def cmd_score(cfg: PipelineConfig, rec: RunRecorder | None = None) -> RunReport:
    """Score every app in the input (plus any ``apps`` listed in the config)."""
    own = rec is None
    rec = rec or RunRecorder(cfg.out_dir, "score")
    models_dir = Path(cfg.models_dir or cfg.out_dir)
    loaded = _load(cfg, rec, allow_empty=True)
    nd = _normalized(loaded, rec)
    with rec.stage("load_models"):
        models = {cat: load_model(models_dir / MODEL_FILES[cat.value]) for cat in CATEGORIES}
    apps = list(dict.fromkeys([*loaded.ds.apps, *cfg.apps]))
    with rec.stage("score"):
        results = score_apps(nd, models, apps)
        rows = []
        for r in results:
            z = [r.z[c] for c in CATEGORIES]
            p = [r.p[c] for c in CATEGORIES]
            rows.append([r.app_id, *(f"{v:.10g}" for v in z), *(f"{v:.10g}" for v in p)])
        _write_rows(rec, "scores.csv", SCORE_HEADER, rows)
    rec.report.counts["scored_apps"] = len(rows)
    return rec.finish() if own else rec.report


def cmd_fit_and_score(cfg: PipelineConfig, rec: RunRecorder | None = None) -> RunReport:
    own = rec is None
    rec = rec or RunRecorder(cfg.out_dir, "fit_and_score")
    cmd_fit(cfg, rec)
    cmd_score(cfg, rec)
    return rec.finish() if own else rec.report


def cmd_report(cfg: PipelineConfig) -> RunReport:
    """All stages into one output directory under a single manifest."""
    rec = RunRecorder(cfg.out_dir, "report")
    cmd_normalize(cfg, rec)
    cmd_stats(cfg, rec)
    cmd_communities(cfg, rec)
    cmd_fit(cfg, rec)
    cmd_score(cfg, rec)
    return rec.finish()

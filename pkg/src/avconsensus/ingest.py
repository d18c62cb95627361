"""Detection dataset loading, engine anonymization and corpus statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("app_id", "engine_id", "raw_signature")
FORMATS = ("delimited", "json-lines")
_ALIAS_RE = re.compile(r"AV([1-9][0-9]*)")


class LoadError(ValueError):
    """Raised when a detections file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    app_id: str
    engine_id: str
    raw_signature: str
    scan_date: date | None = None

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.app_id, self.engine_id, self.raw_signature)


@dataclass(frozen=True)
class Dataset:
    """Deduplicated detection records plus dense app/engine indices.

    Indices follow order of first appearance, so they are stable for a
    given input file.
    """

    records: tuple[DetectionRecord, ...]
    app_index: dict[str, int] = field(repr=False)
    engine_index: dict[str, int] = field(repr=False)

    @classmethod
    def from_records(cls, records: Iterable[DetectionRecord]) -> "Dataset":
        seen: set[tuple[str, str, str]] = set()
        kept: list[DetectionRecord] = []
        app_index: dict[str, int] = {}
        engine_index: dict[str, int] = {}
        dropped = 0
        for rec in records:
            if rec.triple in seen:
                dropped += 1
                continue
            seen.add(rec.triple)
            kept.append(rec)
            app_index.setdefault(rec.app_id, len(app_index))
            engine_index.setdefault(rec.engine_id, len(engine_index))
        if dropped:
            log.info("dropped %d duplicate detection triples", dropped)
        return cls(tuple(kept), app_index, engine_index)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_apps(self) -> int:
        return len(self.app_index)

    @property
    def n_engines(self) -> int:
        return len(self.engine_index)

    @property
    def apps(self) -> list[str]:
        return list(self.app_index)

    @property
    def engines(self) -> list[str]:
        return list(self.engine_index)


@dataclass(frozen=True)
class SummaryStats:
    n_apps: int
    n_engines: int
    n_signatures: int
    mean_detections_per_app: float
    sd_detections_per_app: float
    detections_histogram: dict[int, int]
    per_engine_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "n_apps": self.n_apps,
            "n_engines": self.n_engines,
            "n_signatures": self.n_signatures,
            "mean_detections_per_app": self.mean_detections_per_app,
            "sd_detections_per_app": self.sd_detections_per_app,
            "detections_histogram": {str(k): v for k, v in self.detections_histogram.items()},
            "per_engine_counts": dict(self.per_engine_counts),
        }


def _parse_date(value: str | None, line: int) -> date | None:
    if value is None or not str(value).strip():
        return None
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise LoadError(f"bad scan_date {value!r}", line) from exc


def _make_record(row: dict, line: int) -> DetectionRecord:
    values = {}
    for key in REQUIRED_FIELDS:
        raw = row.get(key)
        if raw is None or not str(raw).strip():
            raise LoadError(f"missing {key}", line)
        values[key] = str(raw).strip()
    return DetectionRecord(scan_date=_parse_date(row.get("scan_date"), line), **values)


def _read_delimited(path: Path, sep: str) -> Iterable[DetectionRecord]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=sep)
        if reader.fieldnames is None:
            return
        missing = [k for k in REQUIRED_FIELDS if k not in reader.fieldnames]
        if missing:
            raise LoadError(f"header lacks columns {missing}", 1)
        for row in reader:
            if None in row:
                raise LoadError("too many fields", reader.line_num)
            yield _make_record(row, reader.line_num)


def _read_jsonl(path: Path) -> Iterable[DetectionRecord]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"invalid json ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise LoadError("expected a json object", lineno)
            yield _make_record(obj, lineno)


def load_detections(
    path: str | Path, format: str = "delimited", sep: str = ",", allow_empty: bool = False
) -> Dataset:
    """Load detection records from a delimited (header required) or json-lines file."""
    path = Path(path)
    if format == "delimited":
        records = list(_read_delimited(path, sep))
    elif format == "json-lines":
        records = list(_read_jsonl(path))
    else:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not records and not allow_empty:
        raise LoadError(f"{path}: no records")
    return Dataset.from_records(records)


def write_detections(ds: Dataset | Iterable[DetectionRecord], path: str | Path, sep: str = ",") -> None:
    records = ds.records if isinstance(ds, Dataset) else ds
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=sep, lineterminator="\n")
        writer.writerow([*REQUIRED_FIELDS, "scan_date"])
        for r in records:
            writer.writerow([r.app_id, r.engine_id, r.raw_signature, r.scan_date.isoformat() if r.scan_date else ""])


def engine_detection_counts(ds: Dataset) -> Counter:
    return Counter(r.engine_id for r in ds.records)


def _is_aliased(counts: Counter) -> bool:
    # already AV1..AVn with non-increasing counts: keep as-is
    nums = []
    for engine in counts:
        m = _ALIAS_RE.fullmatch(engine)
        if not m:
            return False
        nums.append(int(m.group(1)))
    n = len(nums)
    if sorted(nums) != list(range(1, n + 1)):
        return False
    ordered = [counts[f"AV{i}"] for i in range(1, n + 1)]
    return all(a >= b for a, b in zip(ordered, ordered[1:]))


def anonymize_engines(ds: Dataset, salt: str = "") -> tuple[Dataset, dict[str, str]]:
    """Replace engine ids by AV1..AVn, most active engine first.

    Ties in detection count are ordered by a salted SHA-256 of the
    original id, so a fixed salt always yields the same aliases.
    """
    counts = engine_detection_counts(ds)
    if _is_aliased(counts):
        alias_map = {e: e for e in counts}
    else:
        def tie_key(engine: str) -> str:
            return hashlib.sha256(f"{salt}\x00{engine}".encode()).hexdigest()

        order = sorted(counts, key=lambda e: (-counts[e], tie_key(e), e))
        alias_map = {e: f"AV{i}" for i, e in enumerate(order, 1)}
    aliased = Dataset.from_records(
        DetectionRecord(r.app_id, alias_map[r.engine_id], r.raw_signature, r.scan_date) for r in ds.records
    )
    return aliased, alias_map


def write_alias_map(alias_map: dict[str, str], path: str | Path, sep: str = ",") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=sep, lineterminator="\n")
        writer.writerow(["engine_id", "alias"])
        for engine, alias in sorted(alias_map.items(), key=lambda kv: int(kv[1][2:])):
            writer.writerow([engine, alias])


def per_app_counts(ds: Dataset) -> list[int]:
    """Detections (signature records) per app, in app_index order."""
    counts = [0] * ds.n_apps
    for r in ds.records:
        counts[ds.app_index[r.app_id]] += 1
    return counts


def dataset_summary(ds: Dataset) -> SummaryStats:
    if len(ds) == 0:
        raise ValueError("cannot summarize an empty dataset")
    counts = per_app_counts(ds)
    n = len(counts)
    total = sum(counts)
    mean = total / n
    # population standard deviation
    sd = math.sqrt(sum((c - mean) ** 2 for c in counts) / n)
    histogram = dict(sorted(Counter(counts).items()))
    per_engine = engine_detection_counts(ds)
    return SummaryStats(
        n_apps=n,
        n_engines=ds.n_engines,
        n_signatures=total,
        mean_detections_per_app=mean,
        sd_detections_per_app=sd,
        detections_histogram=histogram,
        per_engine_counts={e: per_engine[e] for e in ds.engine_index},
    )

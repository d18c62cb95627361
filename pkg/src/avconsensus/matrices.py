"""Indicator and count matrices over apps, plus column correlations."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .ingest import Dataset
from .normalize import CATEGORIES, NormalizedDetection, RuleSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledMatrix:
    """An apps x columns matrix with row and column labels.

    A (apps x engines) and B (apps x classes) are sparse 0/1; D
    (apps x categories) is a dense count array.
    """

    data: sparse.csr_matrix | np.ndarray
    rows: tuple[str, ...]
    columns: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def dense(self) -> np.ndarray:
        return self.data.toarray() if sparse.issparse(self.data) else np.asarray(self.data)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.data.sum(axis=1)).ravel().astype(np.int64)

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.data.sum(axis=0)).ravel().astype(np.int64)

    @property
    def density(self) -> float:
        n = self.shape[0] * self.shape[1]
        nnz = self.data.nnz if sparse.issparse(self.data) else int(np.count_nonzero(self.data))
        return nnz / n if n else 0.0


EngineMatrix = ClassMatrix = CategoryCountMatrix = LabeledMatrix


def _indicator(rows: list[int], cols: list[int], shape: tuple[int, int]) -> sparse.csr_matrix:
    m = sparse.coo_matrix((np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=shape).tocsr()
    m.sum_duplicates()
    m.data[:] = 1
    return m.astype(np.int8)


def _app_order(nd: Sequence[NormalizedDetection], app_index: dict[str, int] | None) -> dict[str, int]:
    if app_index is not None:
        return app_index
    order: dict[str, int] = {}
    for d in nd:
        order.setdefault(d.app_id, len(order))
    return order


def build_engine_matrix(ds: Dataset) -> LabeledMatrix:
    rows = [ds.app_index[r.app_id] for r in ds.records]
    cols = [ds.engine_index[r.engine_id] for r in ds.records]
    m = _indicator(rows, cols, (ds.n_apps, ds.n_engines))
    return LabeledMatrix(m, tuple(ds.app_index), tuple(ds.engine_index))


def build_class_matrix(
    nd: Sequence[NormalizedDetection], rs: RuleSet, app_index: dict[str, int] | None = None
) -> LabeledMatrix:
    """B[i, j] = 1 iff app i received class j from any engine; columns in rule-rank order."""
    apps = _app_order(nd, app_index)
    col = {c: j for j, c in enumerate(rs.class_names)}
    m = _indicator([apps[d.app_id] for d in nd], [col[d.class_name] for d in nd], (len(apps), len(col)))
    return LabeledMatrix(m, tuple(apps), tuple(rs.class_names))


def build_category_counts(
    nd: Sequence[NormalizedDetection], app_index: dict[str, int] | None = None
) -> LabeledMatrix:
    apps = _app_order(nd, app_index)
    col = {c: j for j, c in enumerate(CATEGORIES)}
    counts = np.zeros((len(apps), len(CATEGORIES)), dtype=np.int64)
    for d in nd:
        counts[apps[d.app_id], col[d.category]] += 1
    return LabeledMatrix(counts, tuple(apps), tuple(c.value for c in CATEGORIES))


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    labels: tuple[str, ...]
    zero_variance: tuple[str, ...] = field(default=())

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = (self.labels.index(p) for p in pair)
        return float(self.values[i, j])


def pearson_correlation(m, labels: Sequence[str] | None = None) -> CorrelationMatrix:
    """Sample Pearson correlation between columns.

    Columns with zero variance get correlation 0 against every other
    column (diagonal stays 1) and are listed in ``zero_variance``.
    """
    if isinstance(m, LabeledMatrix):
        labels = labels or m.columns
        x = m.dense()
    else:
        x = m.toarray() if sparse.issparse(m) else np.asarray(m)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("correlation needs a 2-d matrix with at least 2 rows")
    labels = tuple(labels) if labels is not None else tuple(str(j) for j in range(x.shape[1]))
    centered = x - x.mean(axis=0)
    ss = np.einsum("ij,ij->j", centered, centered)
    scale = np.sqrt(ss)
    dead = ss <= 1e-12 * max(1.0, float(ss.max(initial=0.0)))
    scale[dead] = 1.0
    z = centered / scale
    corr = z.T @ z
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    corr = np.clip((corr + corr.T) / 2, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    flagged = tuple(labels[j] for j in np.flatnonzero(dead))
    if flagged:
        log.warning("zero-variance columns set to correlation 0: %s", ", ".join(flagged))
    return CorrelationMatrix(corr, labels, flagged)


def phi_coefficient(x: np.ndarray, y: np.ndarray) -> float:
    """Phi from the 2x2 contingency table of two binary vectors."""
    x = np.asarray(x).astype(bool)
    y = np.asarray(y).astype(bool)
    n11 = int(np.sum(x & y))
    n10 = int(np.sum(x & ~y))
    n01 = int(np.sum(~x & y))
    n00 = int(np.sum(~x & ~y))
    denom = (n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)
    if denom == 0:
        return 0.0
    return (n11 * n00 - n10 * n01) / np.sqrt(float(denom))


def detection_histogram(a: LabeledMatrix) -> dict[int, int]:
    sums, freq = np.unique(a.row_sums(), return_counts=True)
    return {int(s): int(f) for s, f in zip(sums, freq)}


def class_frequency(b: LabeledMatrix) -> dict[str, int]:
    """Number of apps carrying each class, in column order."""
    return {label: int(c) for label, c in zip(b.columns, b.column_sums())}


def write_triplets(m: LabeledMatrix, path: str | Path, labels_path: str | Path | None = None) -> None:
    """``row,col,value`` for nonzero entries plus a labels sidecar (default ``<stem>.labels.json``)."""
    path = Path(path)
    coo = sparse.coo_matrix(m.data)
    order = np.lexsort((coo.col, coo.row))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "value"])
        for k in order:
            writer.writerow([int(coo.row[k]), int(coo.col[k]), int(coo.data[k])])
    sidecar = Path(labels_path) if labels_path is not None else path.with_suffix(".labels.json")
    sidecar.write_text(json.dumps({"rows": list(m.rows), "columns": list(m.columns)}, indent=1) + "\n", "utf-8")


def write_correlation(c: CorrelationMatrix, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["", *c.labels])
        for label, row in zip(c.labels, c.values):
            writer.writerow([label, *(f"{v:.6f}" for v in row)])

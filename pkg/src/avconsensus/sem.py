"""Single-factor latent models per malware category, fit by least squares on covariances.

Each category gets an apps x engines 0/1 matrix. Its sample covariance S
is approximated by ``w w^T + diag(theta)`` (latent variance fixed to 1)
and an app's score is the loading-weighted sum of its indicators pushed
through the logistic function.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from . import __version__
from .matrices import LabeledMatrix
from .normalize import CATEGORIES, Category, NormalizedDetection

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """Fit failed; ``model`` holds the last iterate when there is one."""

    def __init__(self, message: str, model: "FactorModel | None" = None):
        super().__init__(message)
        self.model = model
        self.residual = model.fit_residual if model is not None else None


@dataclass(frozen=True)
class FitOptions:
    max_iters: int = 20_000
    tol: float = 1e-10
    seed: int = 0
    standardize: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class FactorModel:
    category: str
    engines: tuple[str, ...]
    loadings: np.ndarray
    unique_variances: np.ndarray
    fit_residual: float
    n_samples: int
    standardize: bool = False
    n_iter: int = 0
    converged: bool = True
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def heywood(self) -> tuple[str, ...]:
        """Engines whose unique variance hit zero (improper solution)."""
        return tuple(
            e for e, w, t in zip(self.engines, self.loadings, self.unique_variances) if w != 0 and t <= 1e-12
        )

    def loading(self, engine: str) -> float:
        return float(self.loadings[self.engines.index(engine)])

    def implied_covariance(self) -> np.ndarray:
        return np.outer(self.loadings, self.loadings) + np.diag(self.unique_variances)

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "engines": list(self.engines),
            "loadings": [float(x) for x in self.loadings],
            "unique_variances": [float(x) for x in self.unique_variances],
            "fit_residual": float(self.fit_residual),
            "n_samples": int(self.n_samples),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "heywood": list(self.heywood),
            "standardize": bool(self.standardize),
            "version": __version__,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FactorModel":
        loadings = np.asarray(doc["loadings"], dtype=float)
        theta = np.asarray(doc["unique_variances"], dtype=float)
        if not (len(doc["engines"]) == len(loadings) == len(theta)):
            raise ValueError("model file: engines, loadings and unique_variances differ in length")
        return cls(
            category=doc["category"],
            engines=tuple(doc["engines"]),
            loadings=loadings,
            unique_variances=theta,
            fit_residual=float(doc["fit_residual"]),
            n_samples=int(doc["n_samples"]),
            standardize=bool(doc.get("standardize", False)),
            n_iter=int(doc.get("n_iter", 0)),
            converged=bool(doc.get("converged", True)),
        )


def save_model(model: FactorModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> FactorModel:
    return FactorModel.from_dict(json.loads(Path(path).read_text("utf-8")))


def _as_category(category: Category | str) -> Category:
    try:
        return category if isinstance(category, Category) else Category(category)
    except ValueError:
        raise ValueError(f"unknown category {category!r}") from None


def build_category_matrix(
    nd: Sequence[NormalizedDetection],
    category: Category | str,
    app_index: Mapping[str, int] | None = None,
    engines: Sequence[str] | None = None,
) -> LabeledMatrix:
    """X[i, j] = 1 iff engine j gave app i a detection in ``category``.

    Rows and columns default to first-appearance order over all of ``nd``
    (not only the category's detections), so the three category matrices
    share one layout.
    """
    category = _as_category(category)
    if not nd:
        raise ValueError("no normalized detections")
    if app_index is None:
        app_index = {}
        for d in nd:
            app_index.setdefault(d.app_id, len(app_index))
    if engines is None:
        engines = list(dict.fromkeys(d.engine_id for d in nd))
    col = {e: j for j, e in enumerate(engines)}
    rows, cols = [], []
    for d in nd:
        if d.category == category and d.engine_id in col and d.app_id in app_index:
            rows.append(app_index[d.app_id])
            cols.append(col[d.engine_id])
    m = sparse.coo_matrix(
        (np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(len(app_index), len(engines))
    ).tocsr()
    m.sum_duplicates()
    m.data[:] = 1
    return LabeledMatrix(m.astype(np.int8), tuple(app_index), tuple(engines))


def objective(s: np.ndarray, loadings: np.ndarray, theta: np.ndarray) -> float:
    """Squared Frobenius distance between S and w w^T + diag(theta)."""
    r = s - np.outer(loadings, loadings) - np.diag(theta)
    return float(np.sum(r * r))


def gradient(s: np.ndarray, loadings: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = s - np.outer(loadings, loadings) - np.diag(theta)
    return -4.0 * r @ loadings, -2.0 * np.diag(r).copy()


def _initial(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(s)
    contrib = vals[-1] * vecs[:, -1] ** 2
    return np.sqrt(np.maximum(contrib, 0.01)), np.diag(s) / 2.0


def best_unique_variances(s: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """argmin over theta >= 0 of the objective for fixed loadings."""
    return np.maximum(np.diag(s) - loadings**2, 0.0)


def profile_objective(s: np.ndarray, loadings: np.ndarray) -> float:
    """Objective with theta minimized out."""
    return objective(s, loadings, best_unique_variances(s, loadings))


def profile_gradient(s: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    r = s - np.outer(loadings, loadings)
    excess = np.maximum(-np.diag(r), 0.0)
    np.fill_diagonal(r, 0.0)
    return -4.0 * r @ loadings + 4.0 * loadings * excess


def profile_hessian(s: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    r = s - np.outer(loadings, loadings)
    excess = np.maximum(-np.diag(r), 0.0)
    h = 4.0 * np.outer(loadings, loadings) - 4.0 * r
    sq = loadings**2
    np.fill_diagonal(h, 4.0 * (sq.sum() - sq) + 4.0 * excess + 8.0 * sq * (excess > 0))
    return h


def _descend(s: np.ndarray, loadings: np.ndarray, opts: FitOptions):
    """Minimize the profiled objective over the loadings.

    Each step follows the gradient rescaled by the absolute Hessian
    spectrum (eigenvalues floored), then backtracks until the Armijo
    condition holds, so the objective never increases.
    """
    f = profile_objective(s, loadings)
    history = [f]
    scale = max(float(np.abs(s).max()), 1e-300)
    it = 0
    for it in range(1, opts.max_iters + 1):
        g = profile_gradient(s, loadings)
        vals, vecs = np.linalg.eigh(profile_hessian(s, loadings))
        vals = np.maximum(np.abs(vals), 1e-10 * scale)
        direction = -vecs @ ((vecs.T @ g) / vals)
        slope = float(g @ direction)
        step = 1.0
        while True:
            trial = loadings + step * direction
            f_new = profile_objective(s, trial)
            if f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                # no decrease representable in floating point
                return loadings, f, history, it, True
        rel = (f - f_new) / f if f > 0 else 0.0
        loadings, f = trial, f_new
        history.append(f)
        if f == 0.0 or rel < opts.tol:
            return loadings, f, history, it, True
    return loadings, f, history, it, False


def fit_single_factor(
    x,
    opts: FitOptions = FitOptions(),
    category: str = "",
    engines: Sequence[str] | None = None,
) -> FactorModel:
    """Fit one latent factor to the column covariance of a 0/1 matrix.

    Zero-variance columns get loading 0 and unique variance 0 and do not
    enter the objective. The factor's sign is chosen so the loadings sum
    to a non-negative value.
    """
    if isinstance(x, LabeledMatrix):
        engines = engines or x.columns
        x = x.data
    x = x.toarray() if sparse.issparse(x) else np.asarray(x)
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    engines = tuple(engines) if engines is not None else tuple(f"AV{j + 1}" for j in range(p))
    if n < 2:
        raise FitError("need at least 2 samples")
    s_full = np.cov(x, rowvar=False, ddof=1).reshape(p, p)
    var = np.diag(s_full)
    usable = np.flatnonzero(var > 1e-15)
    if usable.size < 2:
        raise FitError(f"need at least 2 engines with nonzero variance, found {usable.size}")
    if n < 10 * usable.size:
        log.warning("%s: %d samples for %d engines (fewer than 10 per engine)", category, n, usable.size)
    s = s_full[np.ix_(usable, usable)]
    if opts.standardize:
        d = np.sqrt(np.diag(s))
        s = s / np.outer(d, d)
    w0, _ = _initial(s)
    w, f, history, n_iter, converged = _descend(s, w0, opts)
    if w.sum() < 0:
        w = -w
    t = best_unique_variances(s, w)
    loadings = np.zeros(p)
    theta = np.zeros(p)
    loadings[usable] = w
    theta[usable] = t
    model = FactorModel(
        category=category,
        engines=engines,
        loadings=loadings,
        unique_variances=theta,
        fit_residual=f,
        n_samples=n,
        standardize=opts.standardize,
        n_iter=n_iter,
        converged=converged,
        history=tuple(history),
    )
    if model.heywood:
        log.warning("%s: zero unique variance for %s", category or "fit", ", ".join(model.heywood))
    if not converged:
        raise FitError(f"{category or 'fit'}: no convergence in {opts.max_iters} iterations (residual {f:.3e})", model)
    return model


def fit_categories(
    nd: Sequence[NormalizedDetection], opts: FitOptions = FitOptions(), engines: Sequence[str] | None = None
) -> dict[Category, FactorModel]:
    """One model per category over a shared app x engine layout."""
    if engines is None:
        engines = list(dict.fromkeys(d.engine_id for d in nd))
    app_index: dict[str, int] = {}
    for d in nd:
        app_index.setdefault(d.app_id, len(app_index))
    models = {}
    for cat in CATEGORIES:
        x = build_category_matrix(nd, cat, app_index, engines)
        models[cat] = fit_single_factor(x, opts, category=cat.value)
    return models


def z_score(x, model: FactorModel) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != len(model.loadings):
        raise ValueError(f"indicator vector has length {x.size}, model has {len(model.loadings)} engines")
    return float(x @ model.loadings)


def logistic(z: float) -> float:
    """e^z / (1 + e^z), evaluated without overflow for large |z|."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class ScoreResult:
    app_id: str
    z: dict[Category, float]
    p: dict[Category, float]


def _indicator_vector(app_id: str, nd: Iterable[NormalizedDetection], category: Category, model: FactorModel):
    col = {e: j for j, e in enumerate(model.engines)}
    x = np.zeros(len(model.engines))
    for d in nd:
        if d.app_id == app_id and d.category == category and d.engine_id in col:
            x[col[d.engine_id]] = 1.0
    return x


def score_app(
    app_id: str, nd: Sequence[NormalizedDetection], models: Mapping[Category, FactorModel]
) -> ScoreResult:
    z, p = {}, {}
    for cat, model in models.items():
        cat = _as_category(cat)
        z[cat] = z_score(_indicator_vector(app_id, nd, cat, model), model)
        p[cat] = logistic(z[cat])
    return ScoreResult(app_id, z, p)


def score_apps(
    nd: Sequence[NormalizedDetection],
    models: Mapping[Category, FactorModel],
    apps: Sequence[str] | None = None,
) -> list[ScoreResult]:
    """Vectorized ``score_app`` over every app (first-appearance order by default)."""
    if apps is None:
        apps = list(dict.fromkeys(d.app_id for d in nd))
    app_index = {a: i for i, a in enumerate(apps)}
    z_cols = {}
    for cat, model in models.items():
        cat = _as_category(cat)
        if nd:
            x = build_category_matrix(nd, cat, app_index, model.engines).data
            z_cols[cat] = np.asarray(x @ model.loadings).ravel()
        else:
            z_cols[cat] = np.zeros(len(apps))
    out = []
    for i, app in enumerate(apps):
        z = {cat: float(col[i]) for cat, col in z_cols.items()}
        out.append(ScoreResult(app, z, {cat: logistic(v) for cat, v in z.items()}))
    return out

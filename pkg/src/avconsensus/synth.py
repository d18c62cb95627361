"""Synthetic multi-engine detection data with planted category factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Dataset, DetectionRecord
from .normalize import CATEGORIES, Category

# tokens that the default rules map to each class
CLASS_TOKENS: dict[str, tuple[str, ...]] = {
    "Airpush": ("airpush", "airpus"),
    "Leadbolt": ("leadbolt",),
    "Revmob": ("revmob",),
    "StartApp": ("startapp",),
    "Apperhand/Counterclank": ("apperhand", "counterclank"),
    "Kuguo": ("kuguo",),
    "WAPS": ("waps", "wapsx"),
    "Dogwin": ("dowgin", "dogwin"),
    "Cauly": ("cauly",),
    "Wooboo": ("wooboo",),
    "Mobwin": ("mobwin",),
    "DroidKungFu": ("droidkungfu",),
    "Plankton": ("plankton",),
    "Youmi": ("youmi", "yomi"),
    "Fraud": ("fraud", "oneclickfraud"),
    "Multiads": ("multiads",),
    "Adware (gen)": ("adware", "adload"),
    "Riskware": ("riskware",),
    "SPR": ("spr",),
    "Deng": ("deng",),
    "SMSreg": ("smsreg",),
    "Cova": ("cova", "covav"),
    "Denofow": ("denofow",),
    "FakeFlash": ("fakeflash",),
    "FakeApp": ("fakeapp",),
    "FakeInst": ("fakeinst",),
    "Appinventor": ("appinventor",),
    "SWF": ("swf",),
    "Trojan (gen)": ("trojan",),
    "Mobidash": ("mobidash",),
    "Spy": ("spy", "spyware"),
    "Gingermaster": ("gingermaster",),
    "UnclassifiedMalware": ("unclassifiedmalware",),
    "Virus": ("virus",),
    "Heur": ("heur", "heuristic"),
    "GEN": ("generic", "gen"),
    "PUA": ("pua", "ospua"),
    "Reputation": ("reputation",),
    "AppUnwanted": ("applicunwnt",),
    "Artemis": ("artemis",),
    "Other": ("malware", "suspicious", "pkg"),
}

CLASS_CATEGORY: dict[str, Category] = {}
for _name in list(CLASS_TOKENS)[:17]:
    CLASS_CATEGORY[_name] = Category.ADWARE
for _name in list(CLASS_TOKENS)[17:32]:
    CLASS_CATEGORY[_name] = Category.HARMFUL
for _name in list(CLASS_TOKENS)[32:]:
    CLASS_CATEGORY[_name] = Category.UNKNOWN

# classes that tend to be reported together by different engines
COMPANIONS = {
    "FakeFlash": ("FakeApp",),
    "Plankton": ("Apperhand/Counterclank",),
    "Trojan (gen)": ("Artemis", "AppUnwanted", "Other"),
}

_PREFIX = {Category.ADWARE: "Adware", Category.HARMFUL: "Mal", Category.UNKNOWN: "Mal"}
_STYLES = (
    "{prefix}.AndroidOS.{family}.{variant}",
    "Android/{family}.{variant}",
    "a variant of Android/{family}.{variant}",
    "{prefix}:Android/{family}",
    "Android.{prefix}.{family}.{number}",
)
_VARIANTS = "bcdefghjk"


def latent_correlation() -> np.ndarray:
    """Category latent correlation, Adware/Harmful/Unknown order."""
    return np.array([[1.0, 0.06, 0.3], [0.06, 1.0, 0.44], [0.3, 0.44, 1.0]])


@dataclass(frozen=True)
class SyntheticTruth:
    engines: tuple[str, ...]
    loadings: np.ndarray  # engines x categories
    intercepts: np.ndarray  # engines x categories


def signature_for(class_name: str, style: int, rng: np.random.Generator) -> str:
    tokens = CLASS_TOKENS[class_name]
    family = tokens[int(rng.integers(len(tokens)))]
    family = family[0].upper() + family[1:]
    return _STYLES[style % len(_STYLES)].format(
        prefix=_PREFIX[CLASS_CATEGORY[class_name]],
        family=family,
        variant=_VARIANTS[int(rng.integers(len(_VARIANTS)))].upper(),
        number=int(rng.integers(1, 10)),
    )


def synthetic_dataset(
    n_apps: int = 3000, n_engines: int = 20, seed: int = 0
) -> tuple[Dataset, SyntheticTruth]:
    """Apps with correlated category latents; engines detect via logistic links.

    Each app draws one primary class per category (weighted by class
    popularity); a detecting engine reports the primary class, a companion
    class, or the category's generic class. Apps nobody detects get one
    detection from a random engine so every app is flagged at least once.
    """
    rng = np.random.default_rng(seed)
    engines = tuple(f"engine{j + 1:02d}" for j in range(n_engines))
    loadings = rng.uniform(0.0, 2.5, size=(n_engines, 3))
    # a few engines specialise in one category
    for j in range(n_engines):
        weak = rng.random(3) < 0.25
        loadings[j, weak] *= 0.1
    intercepts = rng.uniform(-4.5, -2.5, size=(n_engines, 3))
    chol = np.linalg.cholesky(latent_correlation())
    latent = rng.standard_normal((n_apps, 3)) @ chol.T

    by_cat = {c: [k for k, v in CLASS_CATEGORY.items() if v == c] for c in CATEGORIES}
    popularity = {c: rng.dirichlet(np.full(len(by_cat[c]), 0.7)) for c in CATEGORIES}
    generic = {Category.ADWARE: "Adware (gen)", Category.HARMFUL: "Trojan (gen)", Category.UNKNOWN: "GEN"}

    records = []
    for i in range(n_apps):
        app = f"app{i + 1:06d}"
        primary = {c: by_cat[c][int(rng.choice(len(by_cat[c]), p=popularity[c]))] for c in CATEGORIES}
        prob = 1.0 / (1.0 + np.exp(-(latent[i] * loadings + intercepts)))
        hits = rng.random(prob.shape) < prob
        if not hits.any():
            hits[int(rng.integers(n_engines)), int(rng.integers(3))] = True
        for j, c_idx in zip(*np.nonzero(hits)):
            cat = CATEGORIES[c_idx]
            cls = primary[cat]
            u = rng.random()
            if cls in COMPANIONS and u < 0.4:
                cls = COMPANIONS[cls][int(rng.integers(len(COMPANIONS[cls])))]
            elif u > 0.85:
                cls = generic[cat]
            records.append(DetectionRecord(app, engines[j], signature_for(cls, j, rng)))
    return Dataset.from_records(records), SyntheticTruth(engines, loadings, intercepts)


def planted_factor_matrix(
    n: int, loadings, intercepts=None, seed: int = 0
) -> np.ndarray:
    """0/1 matrix with column i = Bernoulli(logistic(a_i z + b_i)), z ~ N(0, 1)."""
    rng = np.random.default_rng(seed)
    a = np.asarray(loadings, dtype=float)
    b = np.zeros_like(a) if intercepts is None else np.asarray(intercepts, dtype=float)
    z = rng.standard_normal(n)
    p = 1.0 / (1.0 + np.exp(-(np.outer(z, a) + b)))
    return (rng.random(p.shape) < p).astype(np.int8)


def independent_matrix(n: int, n_cols: int, seed: int = 0, p: float = 0.5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random((n, n_cols)) < p).astype(np.int8)

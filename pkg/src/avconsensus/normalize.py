"""Signature cleaning and first-match rule normalization."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .ingest import Dataset

_SEPARATORS = re.compile(r"[^0-9a-z]+")


class Category(str, Enum):
    ADWARE = "Adware"
    HARMFUL = "HarmfulThreats"
    UNKNOWN = "UnknownGeneric"


# column order of the category count matrix
CATEGORIES = (Category.ADWARE, Category.HARMFUL, Category.UNKNOWN)


class RuleSetError(ValueError):
    pass


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """One stop-word per line; ``#`` starts a comment. None loads the default list."""
    if path is None:
        text = resources.files("avconsensus.data").joinpath("stopwords_default.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = (line.split("#", 1)[0].strip().lower() for line in text.splitlines())
    return frozenset(w for w in words if w)


DEFAULT_STOPWORDS = load_stopwords()


@dataclass(frozen=True)
class TokenSet:
    tokens: frozenset[str]
    source: str = ""

    def joined(self) -> str:
        """Canonical dot-joined form (tokens sorted)."""
        return ".".join(sorted(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.tokens))


def clean_signature(raw: str, stopwords: Iterable[str] = DEFAULT_STOPWORDS) -> TokenSet:
    """Lowercase, split on any non-alphanumeric character, drop stop-words.

    >>> sorted(clean_signature("Adware/Startapp.A", {"a"}).tokens)
    ['adware', 'startapp']
    """
    if not raw or not raw.strip():
        raise ValueError("empty signature")
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else frozenset(stopwords)
    tokens = frozenset(t for t in _SEPARATORS.split(raw.lower()) if t and t not in stop)
    return TokenSet(tokens, raw)


@dataclass(frozen=True)
class Rule:
    rank: int
    pattern: str
    class_name: str
    category: Category

    @cached_property
    def regex(self) -> re.Pattern[str]:
        return re.compile(self.pattern)

    def matches(self, token: str) -> bool:
        return self.regex.fullmatch(token) is not None


# strings a catch-all pattern must accept
_CATCHALL_PROBES = ("", "zzz", "adware", "a1b2", "unmatchable")


class RuleSet:
    """Rules ordered by rank; the single catch-all rule comes last.

    A rule matches a signature when its pattern matches one of the
    cleaned tokens in full. An empty token set is tested as the empty
    string, which only the catch-all accepts.
    """

    def __init__(self, rules: Iterable[Rule]):
        self.rules: tuple[Rule, ...] = tuple(sorted(rules, key=lambda r: r.rank))
        self._validate()

    def _validate(self) -> None:
        if not self.rules:
            raise RuleSetError("empty rule set")
        ranks = [r.rank for r in self.rules]
        if len(set(ranks)) != len(ranks):
            raise RuleSetError("duplicate rule ranks")
        for rule in self.rules:
            try:
                rule.regex
            except re.error as exc:
                raise RuleSetError(f"rule {rule.rank}: bad pattern {rule.pattern!r}: {exc}") from exc
        catchall = [r for r in self.rules if all(r.matches(p) for p in _CATCHALL_PROBES)]
        if len(catchall) != 1:
            raise RuleSetError(f"expected exactly one catch-all rule, found {len(catchall)}")
        if catchall[0] is not self.rules[-1]:
            raise RuleSetError("catch-all rule must have the lowest priority")

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def catchall(self) -> Rule:
        return self.rules[-1]

    @cached_property
    def class_names(self) -> list[str]:
        """Distinct class names in rank order."""
        return list(dict.fromkeys(r.class_name for r in self.rules))

    @cached_property
    def class_category(self) -> dict[str, Category]:
        return {r.class_name: r.category for r in self.rules}

    def by_rank(self, rank: int) -> Rule:
        for r in self.rules:
            if r.rank == rank:
                return r
        raise KeyError(rank)

    @classmethod
    def from_file(cls, path: str | Path | None = None) -> "RuleSet":
        """Read ``rank<TAB>pattern<TAB>class<TAB>category`` lines."""
        if path is None:
            text = resources.files("avconsensus.data").joinpath("rules_default.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        rules = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise RuleSetError(f"line {lineno}: expected 4 tab-separated fields")
            rank, pattern, class_name, category = parts
            try:
                rules.append(Rule(int(rank), pattern, class_name.strip(), Category(category.strip())))
            except ValueError as exc:
                raise RuleSetError(f"line {lineno}: {exc}") from exc
        return cls(rules)

    def to_file(self, path: str | Path) -> None:
        lines = ["# rank\tpattern\tclass\tcategory"]
        lines += [f"{r.rank}\t{r.pattern}\t{r.class_name}\t{r.category.value}" for r in self.rules]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_ruleset() -> RuleSet:
    return RuleSet.from_file(None)


def apply_rules(ts: TokenSet, rs: RuleSet) -> tuple[str, Category, int]:
    candidates = ts.tokens or ("",)
    for rule in rs.rules:
        if any(rule.matches(t) for t in candidates):
            return rule.class_name, rule.category, rule.rank
    raise AssertionError("rule set without catch-all")  # unreachable after validation


@dataclass(frozen=True, slots=True)
class NormalizedDetection:
    app_id: str
    engine_id: str
    class_name: str
    category: Category
    matched_rule_rank: int


def normalize_dataset(
    ds: Dataset, rs: RuleSet, stopwords: Iterable[str] = DEFAULT_STOPWORDS
) -> list[NormalizedDetection]:
    stop = frozenset(stopwords)
    cache: dict[str, tuple[str, Category, int]] = {}
    out = []
    for rec in ds.records:
        hit = cache.get(rec.raw_signature)
        if hit is None:
            hit = cache[rec.raw_signature] = apply_rules(clean_signature(rec.raw_signature, stop), rs)
        out.append(NormalizedDetection(rec.app_id, rec.engine_id, *hit))
    return out


NORMALIZED_HEADER = ("app_id", "engine_id", "class", "category", "rule_rank")


def write_normalized(nd: Iterable[NormalizedDetection], path: str | Path, sep: str = ",") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=sep, lineterminator="\n")
        writer.writerow(NORMALIZED_HEADER)
        for d in nd:
            writer.writerow([d.app_id, d.engine_id, d.class_name, d.category.value, d.matched_rule_rank])


def read_normalized(path: str | Path, sep: str = ",") -> list[NormalizedDetection]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=sep)
        return [
            NormalizedDetection(
                row["app_id"], row["engine_id"], row["class"], Category(row["category"]), int(row["rule_rank"])
            )
            for row in reader
        ]

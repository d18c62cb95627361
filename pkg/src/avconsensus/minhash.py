"""Minhash sketches of cleaned signatures and LSH banding into review groups."""

from __future__ import annotations

import hashlib
import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .normalize import TokenSet

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def exact_jaccard(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        raise ValueError("undefined Jaccard: both sets empty")
    return len(a & b) / union


@dataclass(frozen=True)
class MinHashConfig:
    k: int = 200
    shingle_width: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.shingle_width < 1:
            raise ValueError("shingle_width must be >= 1")

    @property
    def seeds(self) -> np.ndarray:
        return _seeds(self.k, self.seed)


_seed_cache: dict[tuple[int, int], np.ndarray] = {}


def _seeds(k: int, seed: int) -> np.ndarray:
    key = (k, seed)
    if key not in _seed_cache:
        rng = np.random.default_rng(seed)
        _seed_cache[key] = rng.integers(0, 2**64 - 1, size=k, dtype=np.uint64, endpoint=True)
    return _seed_cache[key]


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 products wrap mod 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _base_hash(item: str) -> int:
    return int.from_bytes(hashlib.blake2b(item.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    values: np.ndarray
    k: int
    shingle_width: int
    seed: int

    @property
    def config(self) -> tuple[int, int, int]:
        return (self.k, self.shingle_width, self.seed)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MinHashSignature):
            return NotImplemented
        return self.config == other.config and bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash((self.config, self.values.tobytes()))


def shingles(text: str, w: int) -> set[str]:
    """Character w-shingles; text shorter than w is its own single shingle."""
    if len(text) <= w:
        return {text}
    return {text[i : i + w] for i in range(len(text) - w + 1)}


def minhash_items(items: Iterable[str], cfg: MinHashConfig) -> MinHashSignature:
    """Minhash an arbitrary non-empty set of strings."""
    base = np.fromiter((_base_hash(s) for s in set(items)), dtype=np.uint64)
    if base.size == 0:
        raise ValueError("cannot minhash an empty set")
    with np.errstate(over="ignore"):
        hashed = _mix64(base[:, None] ^ cfg.seeds[None, :])
    return MinHashSignature(hashed.min(axis=0), cfg.k, cfg.shingle_width, cfg.seed)


def minhash(ts: TokenSet, cfg: MinHashConfig = MinHashConfig()) -> MinHashSignature:
    return minhash_items(shingles(ts.joined(), cfg.shingle_width), cfg)


def estimate_similarity(s1: MinHashSignature, s2: MinHashSignature) -> float:
    if s1.config != s2.config:
        raise ValueError(f"mismatched minhash configurations {s1.config} vs {s2.config}")
    return float(np.mean(s1.values == s2.values))


@dataclass(frozen=True)
class SignatureGroup:
    bucket_key: int
    members: tuple[int, ...]
    representative: str

    @property
    def size(self) -> int:
        return len(self.members)


def _band_keys(sig: MinHashSignature, bands: int, rows: int) -> list[int]:
    keys = []
    for b in range(bands):
        chunk = sig.values[b * rows : (b + 1) * rows].tobytes()
        digest = hashlib.blake2b(b.to_bytes(4, "little") + chunk, digest_size=8).digest()
        keys.append(int.from_bytes(digest, "little"))
    return keys


def band_groups(signatures: Sequence[MinHashSignature], bands: int, rows: int) -> list[tuple[int, list[int]]]:
    """Union items that share any band hash.

    Returns ``(bucket_key, member indices)`` pairs. The key is the smallest
    band hash shared by two or more members, or the first band hash for
    a singleton.
    """
    if signatures and bands * rows != signatures[0].k:
        raise ValueError(f"bands*rows = {bands * rows} does not equal k = {signatures[0].k}")
    parent = list(range(len(signatures)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    buckets: dict[int, list[int]] = defaultdict(list)
    first_key = []
    for i, sig in enumerate(signatures):
        keys = _band_keys(sig, bands, rows)
        first_key.append(keys[0])
        for key in keys:
            buckets[key].append(i)
    shared_key: dict[int, int] = {}
    for key in sorted(buckets):
        members = buckets[key]
        if len(members) < 2:
            continue
        root = find(members[0])
        for j in members[1:]:
            rj = find(j)
            if rj != root:
                parent[rj] = root
        for j in members:
            shared_key.setdefault(j, key)
    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(len(signatures)):
        groups[find(i)].append(i)
    out = []
    for members in groups.values():
        keys = [shared_key[j] for j in members if j in shared_key]
        out.append((min(keys) if keys else first_key[members[0]], members))
    return out


def group_signatures(
    corpus: Sequence[TokenSet],
    cfg: MinHashConfig = MinHashConfig(),
    bands: int = 50,
    rows: int = 4,
    counts: Sequence[int] | None = None,
) -> list[SignatureGroup]:
    """Group near-duplicate signatures for manual review.

    Members are corpus positions. ``counts`` gives each entry's number of
    occurrences when the corpus is already deduplicated; the representative
    is the most frequent raw signature. Groups come largest first, ties by key.
    """
    weight = counts if counts is not None else [1] * len(corpus)
    if bands * rows != cfg.k:
        raise ValueError(f"bands*rows = {bands * rows} does not equal k = {cfg.k}")
    cache: dict[frozenset[str], MinHashSignature] = {}
    sigs = []
    for ts in corpus:
        sig = cache.get(ts.tokens)
        if sig is None:
            sig = cache[ts.tokens] = minhash(ts, cfg)
        sigs.append(sig)
    groups = []
    for key, members in band_groups(sigs, bands, rows):
        freq: Counter = Counter()
        for i in members:
            freq[corpus[i].source] += weight[i]
        representative = min(freq, key=lambda s: (-freq[s], s))
        groups.append(SignatureGroup(key, tuple(members), representative))
    groups.sort(key=lambda g: (-g.size, g.bucket_key))
    return groups


def write_group_report(
    groups: Iterable[SignatureGroup],
    corpus: Sequence[TokenSet],
    path: str | Path,
    counts: Sequence[int] | None = None,
    sample: int = 10,
) -> None:
    """One JSON object per group: bucket_key, size, representative, member sample."""
    weight = counts if counts is not None else [1] * len(corpus)
    with Path(path).open("w", encoding="utf-8") as fh:
        for g in groups:
            freq: Counter = Counter()
            for i in g.members:
                freq[corpus[i].source] += weight[i]
            members = sorted(freq, key=lambda s: (-freq[s], s))[:sample]
            doc = {
                "bucket_key": f"{g.bucket_key:016x}",
                "size": g.size,
                "detections": sum(freq.values()),
                "representative": g.representative,
                "members": members,
            }
            fh.write(json.dumps(doc, sort_keys=True) + "\n")

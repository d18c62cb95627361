import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avconsensus.minhash import (
    MinHashConfig,
    band_groups,
    estimate_similarity,
    exact_jaccard,
    group_signatures,
    minhash,
    minhash_items,
    shingles,
    write_group_report,
)
from avconsensus.normalize import TokenSet, clean_signature


def ts(*tokens, source=""):
    return TokenSet(frozenset(tokens), source or ".".join(tokens))


class TestJaccard:
    def test_identical(self):
        assert exact_jaccard({"x", "y"}, {"x", "y"}) == 1.0

    def test_disjoint(self):
        assert exact_jaccard({"x"}, {"y"}) == 0.0

    def test_half(self):
        assert exact_jaccard("abc", "bcd") == 0.5

    def test_both_empty(self):
        with pytest.raises(ValueError, match="undefined Jaccard"):
            exact_jaccard(set(), set())


def test_short_string_is_one_shingle():
    assert shingles("ab", 4) == {"ab"}
    assert shingles("abcde", 4) == {"abcd", "bcde"}


class TestSignature:
    def test_deterministic(self):
        a, b = ts("adware", "airpush"), ts("airpush", "adware")
        assert minhash(a) == minhash(b)
        assert hash(minhash(a)) == hash(minhash(b))

    def test_self_similarity(self):
        s = minhash(ts("trojan", "fakeinst"))
        assert estimate_similarity(s, s) == 1.0

    def test_seed_changes_values(self):
        a = minhash(ts("trojan"), MinHashConfig(seed=1))
        b = minhash(ts("trojan"), MinHashConfig(seed=2))
        assert a != b

    def test_mismatched_config(self):
        with pytest.raises(ValueError, match="mismatched"):
            estimate_similarity(minhash(ts("x")), minhash(ts("x"), MinHashConfig(k=50)))

    def test_empty_set(self):
        with pytest.raises(ValueError):
            minhash_items([], MinHashConfig())

    def test_bad_config(self):
        with pytest.raises(ValueError):
            MinHashConfig(k=0)

    def test_disjoint_near_zero(self):
        cfg = MinHashConfig()
        est = []
        for i in range(200):
            a = minhash_items([f"a{i}_{j}" for j in range(10)], cfg)
            b = minhash_items([f"b{i}_{j}" for j in range(10)], cfg)
            est.append(estimate_similarity(a, b))
        assert np.mean(est) <= 2 / cfg.k

    def test_half_overlap_concentration(self):
        # |A & B| = 10, |A | B| = 20 -> J = 0.5
        inside = 0
        for t in range(200):
            cfg = MinHashConfig(seed=t)
            common = [f"c{j}" for j in range(10)]
            a = minhash_items(common + [f"a{j}" for j in range(5)], cfg)
            b = minhash_items(common + [f"b{j}" for j in range(5)], cfg)
            inside += abs(estimate_similarity(a, b) - 0.5) <= 0.1
        assert inside / 200 >= 0.95


@given(st.sets(st.integers(0, 40), min_size=1, max_size=15), st.sets(st.integers(0, 40), min_size=1, max_size=15))
def test_estimate_tracks_exact(a, b):
    cfg = MinHashConfig(k=200, seed=7)
    est = estimate_similarity(minhash_items(map(str, a), cfg), minhash_items(map(str, b), cfg))
    # 6 standard deviations of a binomial proportion at k=200
    assert abs(est - exact_jaccard(a, b)) <= 6 * 0.5 / np.sqrt(200)


class TestGrouping:
    def test_identical_share_group(self):
        corpus = [ts("adware", "airpush"), ts("adware", "airpush", source="Adware/Airpush"), ts("zzz")]
        groups = group_signatures(corpus)
        assert groups[0].members == (0, 1)
        assert groups[1].members == (2,)

    def test_band_shape_checked(self):
        with pytest.raises(ValueError, match="bands"):
            group_signatures([ts("x")], bands=10, rows=4)
        with pytest.raises(ValueError, match="bands"):
            band_groups([minhash(ts("x"))], 10, 4)

    def test_partition_and_order(self, small_synth):
        ds, _ = small_synth
        corpus = [clean_signature(r.raw_signature) for r in ds.records]
        groups = group_signatures(corpus)
        members = sorted(i for g in groups for i in g.members)
        assert members == list(range(len(corpus)))
        sizes = [g.size for g in groups]
        assert sizes == sorted(sizes, reverse=True)

    def test_representative_is_most_frequent(self):
        corpus = [ts("adware", "airpush", source="B"), ts("adware", "airpush", source="A"), ts("adware", "airpush", source="B")]
        assert group_signatures(corpus)[0].representative == "B"
        assert group_signatures(corpus, counts=[1, 5, 1])[0].representative == "A"

    def test_disjoint_corpus_stays_apart(self):
        cfg = MinHashConfig()
        sigs = [minhash_items([f"s{i}_{j}" for j in range(12)], cfg) for i in range(300)]
        groups = band_groups(sigs, 50, 4)
        merged = sum(len(m) for _, m in groups if len(m) > 1)
        assert merged / len(sigs) <= 0.01

    def test_report(self, tmp_path):
        corpus = [ts("adware", "airpush", source="A"), ts("adware", "airpush", source="B"), ts("zzz")]
        groups = group_signatures(corpus)
        write_group_report(groups, corpus, tmp_path / "g.jsonl", counts=[3, 1, 1])
        docs = [json.loads(line) for line in (tmp_path / "g.jsonl").read_text().splitlines()]
        assert docs[0]["size"] == 2 and docs[0]["detections"] == 4
        assert docs[0]["members"] == ["A", "B"]
        assert len(docs[0]["bucket_key"]) == 16

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from avconsensus.ingest import Dataset, DetectionRecord
from avconsensus.matrices import (
    build_category_counts,
    build_class_matrix,
    build_engine_matrix,
    class_frequency,
    detection_histogram,
    pearson_correlation,
    phi_coefficient,
    write_correlation,
    write_triplets,
)
from avconsensus.normalize import Category, NormalizedDetection, normalize_dataset
from oracles import (
    phi_from_table,
    recount_category_counts,
    recount_class_matrix,
    recount_engine_matrix,
)


def nd_row(app, engine, cls, cat):
    return NormalizedDetection(app, engine, cls, Category(cat), 0)


class TestEngineMatrix:
    def test_two_engines_one_app(self):
        ds = Dataset.from_records([DetectionRecord("a", "e1", "s"), DetectionRecord("a", "e2", "t")])
        a = build_engine_matrix(ds)
        assert a.dense().tolist() == [[1, 1]]
        assert sparse.issparse(a.data)

    def test_repeat_detection_stays_one(self):
        ds = Dataset.from_records([DetectionRecord("a", "e1", "s"), DetectionRecord("a", "e1", "t")])
        assert build_engine_matrix(ds).dense().tolist() == [[1]]

    def test_matches_recount(self, small_synth):
        ds, _ = small_synth
        a = build_engine_matrix(ds)
        assert np.array_equal(a.dense(), recount_engine_matrix(ds.records, ds.apps, ds.engines))
        assert (a.row_sums() == [len({r.engine_id for r in ds.records if r.app_id == app}) for app in ds.apps]).all()


class TestClassMatrix:
    def test_dedups_to_indicator(self, rules):
        nd = [nd_row("a", "e1", "StartApp", "Adware"), nd_row("a", "e2", "StartApp", "Adware"),
              nd_row("a", "e3", "Youmi", "Adware")]
        b = build_class_matrix(nd, rules)
        row = dict(zip(b.columns, b.dense()[0]))
        assert row["StartApp"] == 1 and row["Youmi"] == 1 and sum(row.values()) == 2

    def test_columns_in_rank_order(self, rules):
        b = build_class_matrix([nd_row("a", "e", "Other", "UnknownGeneric")], rules)
        assert list(b.columns) == rules.class_names and len(b.columns) == 41

    def test_matches_recount(self, rules, small_synth):
        ds, _ = small_synth
        nd = normalize_dataset(ds, rules)
        b = build_class_matrix(nd, rules, ds.app_index)
        assert np.array_equal(b.dense(), recount_class_matrix(nd, ds.apps, rules.class_names))


class TestCategoryCounts:
    def test_hand_row(self):
        nd = [nd_row("a", "e1", "X", "Adware"), nd_row("a", "e2", "X", "Adware"),
              nd_row("a", "e3", "Y", "UnknownGeneric")]
        assert build_category_counts(nd).dense().tolist() == [[2, 0, 1]]

    def test_empty(self):
        assert build_category_counts([]).shape == (0, 3)

    def test_matches_recount(self, rules, small_synth):
        ds, _ = small_synth
        nd = normalize_dataset(ds, rules)
        d = build_category_counts(nd, ds.app_index)
        assert np.array_equal(d.dense(), recount_category_counts(nd, ds.apps, list(d.columns)))


class TestCorrelation:
    def test_duplicate_column(self):
        x = np.array([[1, 1], [0, 0], [1, 1], [0, 0], [1, 1]])
        assert pearson_correlation(x).values[0, 1] == pytest.approx(1.0)

    def test_hand_phi(self):
        x = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
        c = pearson_correlation(x)
        assert c.values[0, 1] == pytest.approx(-1.0)
        assert phi_coefficient(x[:, 0], x[:, 1]) == pytest.approx(-1.0)

    def test_zero_variance_flagged(self):
        x = np.array([[1, 0, 1], [0, 0, 1], [1, 0, 0]])
        c = pearson_correlation(x, ["p", "q", "r"])
        assert c.zero_variance == ("q",)
        assert c["p", "q"] == 0.0 and c["q", "q"] == 1.0
        assert np.isfinite(c.values).all()

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            pearson_correlation(np.ones((1, 3)))

    @given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.floats(0.05, 0.95))
    def test_pearson_equals_phi(self, seed, n, p):
        rng = np.random.default_rng(seed)
        x = (rng.random((n, 4)) < p).astype(np.int8)
        c = pearson_correlation(sparse.csr_matrix(x)).values
        assert np.allclose(c, c.T) and np.all(np.diag(c) == 1.0)
        for i in range(4):
            for j in range(i + 1, 4):
                assert abs(c[i, j] - phi_from_table(x[:, i], x[:, j])) <= 1e-9
                assert abs(phi_coefficient(x[:, i], x[:, j]) - phi_from_table(x[:, i], x[:, j])) <= 1e-9


class TestSummaries:
    def test_histogram_singletons(self):
        ds = Dataset.from_records(DetectionRecord(f"a{i}", f"e{i}", "s") for i in range(4))
        assert detection_histogram(build_engine_matrix(ds)) == {1: 4}

    def test_histogram_recount(self, small_synth):
        ds, _ = small_synth
        per_app = {}
        for r in ds.records:
            per_app.setdefault(r.app_id, set()).add(r.engine_id)
        ref = {}
        for engines in per_app.values():
            ref[len(engines)] = ref.get(len(engines), 0) + 1
        assert detection_histogram(build_engine_matrix(ds)) == ref

    def test_class_frequency(self, rules, small_synth):
        ds, _ = small_synth
        nd = normalize_dataset(ds, rules)
        freq = class_frequency(build_class_matrix(nd, rules))
        assert list(freq)[:17] == rules.class_names[:17]
        for cls in ("StartApp", "Other"):
            assert freq[cls] == len({d.app_id for d in nd if d.class_name == cls})


def test_triplets_and_sidecar(tmp_path):
    ds = Dataset.from_records([DetectionRecord("b", "e2", "s"), DetectionRecord("a", "e1", "s"),
                               DetectionRecord("b", "e1", "s")])
    write_triplets(build_engine_matrix(ds), tmp_path / "A.csv")
    assert (tmp_path / "A.csv").read_text() == "row,col,value\n0,0,1\n0,1,1\n1,1,1\n"
    labels = json.loads((tmp_path / "A.labels.json").read_text())
    assert labels == {"rows": ["b", "a"], "columns": ["e2", "e1"]}


def test_correlation_csv(tmp_path):
    c = pearson_correlation(np.array([[1, 0], [0, 1], [1, 1]]), ["x", "y"])
    write_correlation(c, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == ",x,y\nx,1.000000,-0.500000\ny,-0.500000,1.000000\n"

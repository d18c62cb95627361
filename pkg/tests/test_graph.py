import itertools
import json
from pathlib import Path

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avconsensus.graph import (
    CommunityPartition,
    WeightedGraph,
    connected_components,
    detect_communities,
    edge_betweenness,
    emit_graph,
    graph_from_dict,
    graph_to_dict,
    graph_to_dot,
    modularity,
    threshold_graph,
)
from avconsensus.matrices import CorrelationMatrix
from oracles import brute_force_edge_betweenness

GOLDEN = Path(__file__).parent / "golden"


def barbell(bridge=1.0):
    return WeightedGraph.from_edges(
        list("abcdef"),
        [("a", "b", 1), ("b", "c", 1), ("a", "c", 1), ("d", "e", 1), ("e", "f", 1), ("d", "f", 1), ("c", "d", bridge)],
    )


def random_corr(rng, n):
    x = rng.standard_normal((40, n)) + rng.standard_normal((40, 1)) * rng.uniform(0, 1.5, n)
    c = np.corrcoef(x, rowvar=False)
    return CorrelationMatrix(c, tuple(f"c{i}" for i in range(n)))


class TestThreshold:
    c3 = CorrelationMatrix(np.array([[1, 0.6, 0.1], [0.6, 1, 0.1], [0.1, 0.1, 1.0]]), ("x", "y", "z"))

    def test_above_one_is_empty(self):
        assert threshold_graph(self.c3, 1.01).edges == {}

    def test_zero_keeps_positive_pairs(self):
        c = CorrelationMatrix(np.array([[1, 0.2, -0.3], [0.2, 1, 0.0], [-0.3, 0.0, 1]]), ("x", "y", "z"))
        assert threshold_graph(c, 0).edges == {("x", "y"): 0.2}

    def test_single_edge(self):
        assert threshold_graph(self.c3, 0.5).edges == {("x", "y"): 0.6}

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            threshold_graph(self.c3, -0.1)

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, seed, t1, t2):
        c = random_corr(np.random.default_rng(seed), 7)
        lo, hi = sorted((t1, t2))
        assert set(threshold_graph(c, hi).edges) <= set(threshold_graph(c, lo).edges)


class TestBetweenness:
    def test_single_edge(self):
        assert edge_betweenness(WeightedGraph.from_edges("ab", [("a", "b", 0.7)])) == {("a", "b"): 1.0}

    def test_path(self):
        g = WeightedGraph.from_edges("abc", [("a", "b", 1), ("b", "c", 1)])
        assert edge_betweenness(g) == {("a", "b"): 2.0, ("b", "c"): 2.0}

    def test_bridge_strictly_maximal(self):
        eb = edge_betweenness(barbell())
        bridge = eb.pop(("c", "d"))
        assert bridge == 9.0 and all(v < bridge for v in eb.values())

    def test_empty_graph(self):
        with pytest.raises(ValueError):
            edge_betweenness(WeightedGraph(()))

    def test_unweighted_small_graphs_match_oracle(self):
        # every connected graph on up to 5 nodes (the acceptance suite goes to 7)
        for g in nx.graph_atlas_g()[1:53]:
            if not nx.is_connected(g) or g.number_of_edges() == 0:
                continue
            nodes = [str(n) for n in g.nodes]
            wg = WeightedGraph.from_edges(nodes, ((str(u), str(v), 1.0) for u, v in g.edges))
            ref = brute_force_edge_betweenness(wg.nodes, wg.edges)
            got = edge_betweenness(wg)
            assert got == pytest.approx(ref, rel=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_weighted_matches_oracle_and_networkx(self, seed):
        rng = np.random.default_rng(seed)
        nodes = [f"n{i}" for i in range(6)]
        edges = [(u, v, float(rng.choice([0.25, 0.5, 1.0]))) for u, v in itertools.combinations(nodes, 2)
                 if rng.random() < 0.5]
        if not edges:
            return
        wg = WeightedGraph.from_edges(nodes, edges)
        got = edge_betweenness(wg)
        assert got == pytest.approx(brute_force_edge_betweenness(wg.nodes, wg.edges), rel=1e-9)
        g = nx.Graph()
        g.add_edges_from((u, v, {"length": 1 / w}) for (u, v), w in wg.edges.items())
        ref = nx.edge_betweenness_centrality(g, normalized=False, weight="length")
        for (u, v), x in got.items():
            assert x == pytest.approx(ref.get((u, v), ref.get((v, u))), rel=1e-9)


class TestCommunities:
    def test_barbell_splits_in_two(self):
        p = detect_communities(barbell())
        assert p.communities == [("a", "b", "c"), ("d", "e", "f")]
        assert p.modularity == pytest.approx(modularity(barbell(), p.communities))

    def test_unit_barbell_modularity(self):
        assert modularity(barbell(), ["abc", "def"]) == pytest.approx(5 / 14)

    def test_disjoint_triangles(self):
        g = WeightedGraph.from_edges(list("abcdef"), [("a", "b", 1), ("b", "c", 1), ("a", "c", 1),
                                                     ("d", "e", 1), ("e", "f", 1), ("d", "f", 1)])
        assert detect_communities(g).communities == [("a", "b", "c"), ("d", "e", "f")]

    def test_no_edges_all_singletons(self):
        p = detect_communities(WeightedGraph(("x", "y", "z")))
        assert p.communities == [("x",), ("y",), ("z",)] and p.modularity == 0.0

    @given(st.integers(0, 2**32 - 1), st.floats(0, 0.6))
    def test_partition_properties(self, seed, t):
        g = threshold_graph(random_corr(np.random.default_rng(seed), 8), t)
        p = detect_communities(g)
        flat = [n for c in p.communities for n in c]
        assert sorted(flat) == sorted(g.nodes)
        # never merges separate components
        comp = {n: k for k, c in enumerate(connected_components(g)) for n in c}
        for c in p.communities:
            assert len({comp[n] for n in c}) == 1
        if g.edges:
            assert p.modularity >= 0.0


class TestEmit:
    def test_json_roundtrip(self, tmp_path):
        g = barbell(0.5)
        p = detect_communities(g)
        path = emit_graph(g, p, tmp_path / "g.json")
        g2, p2 = graph_from_dict(json.loads(path.read_text()))
        assert g2 == g and p2 == p

    def test_empty_document(self, tmp_path):
        g = WeightedGraph(())
        doc = json.loads(emit_graph(g, None, tmp_path / "e.json").read_text())
        assert doc == {"nodes": [], "edges": [], "modularity": None}
        assert graph_from_dict(doc) == (g, None)
        assert graph_to_dot(g) == "graph classes {\n  node [style=filled, colorscheme=set312];\n}\n"

    def test_dot_golden(self, tmp_path):
        g = barbell(0.5)
        emit_graph(g, detect_communities(g), tmp_path / "g.dot", format="dot")
        assert (tmp_path / "g.dot").read_text() == (GOLDEN / "two_triangles.dot").read_text()

    def test_dot_quotes_labels(self):
        g = WeightedGraph.from_edges(['Trojan (gen)', 'say "hi"'], [('Trojan (gen)', 'say "hi"', 0.4)])
        assert '"say \\"hi\\""' in graph_to_dot(g, CommunityPartition([tuple(g.nodes)], 0.0))

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_graph(barbell(), None, tmp_path / "g.x", format="svg")

    def test_to_dict_keeps_weights(self):
        doc = graph_to_dict(barbell(0.5))
        assert {(e["source"], e["target"]): e["weight"] for e in doc["edges"]}[("c", "d")] == 0.5

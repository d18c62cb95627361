"""Thresholded correlation graphs and edge-betweenness community detection."""

from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .matrices import CorrelationMatrix

Edge = tuple[str, str]

_REL_TOL = 1e-9


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected graph; edge keys are (u, v) with u before v in ``nodes``."""

    nodes: tuple[str, ...]
    edges: dict[Edge, float] = field(default_factory=dict)

    def __post_init__(self):
        pos = {n: i for i, n in enumerate(self.nodes)}
        if len(pos) != len(self.nodes):
            raise ValueError("duplicate node labels")
        for (u, v), w in self.edges.items():
            if u == v:
                raise ValueError(f"self-loop on {u}")
            if pos[u] >= pos[v]:
                raise ValueError(f"edge ({u}, {v}) is not in canonical order")
            if not w > 0:
                raise ValueError(f"edge ({u}, {v}) has non-positive weight {w}")

    @classmethod
    def from_edges(cls, nodes: Sequence[str], edges: Iterable[tuple[str, str, float]]) -> "WeightedGraph":
        pos = {n: i for i, n in enumerate(nodes)}
        canon = {}
        for u, v, w in edges:
            key = (u, v) if pos[u] < pos[v] else (v, u)
            canon[key] = float(w)
        return cls(tuple(nodes), dict(sorted(canon.items(), key=lambda kv: (pos[kv[0][0]], pos[kv[0][1]]))))

    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for (u, v), w in self.edges.items():
            adj[u][v] = w
            adj[v][u] = w
        return adj

    def without(self, edge: Edge) -> "WeightedGraph":
        edges = dict(self.edges)
        del edges[edge]
        return WeightedGraph(self.nodes, edges)


@dataclass(frozen=True)
class CommunityPartition:
    communities: list[tuple[str, ...]]
    modularity: float

    def membership(self) -> dict[str, int]:
        return {n: k for k, comm in enumerate(self.communities) for n in comm}


def threshold_graph(c: CorrelationMatrix, corr_min: float) -> WeightedGraph:
    """Keep pairs with correlation >= corr_min; negative correlations never become edges."""
    if not 0.0 <= corr_min:
        raise ValueError("corr_min must be non-negative")
    edges = {}
    labels = c.labels
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            w = float(c.values[i, j])
            if w >= corr_min and w > 0:
                edges[(labels[i], labels[j])] = w
    return WeightedGraph(tuple(labels), edges)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _REL_TOL * max(1.0, abs(a), abs(b))


def _single_source(adj, source, pos):
    """Dijkstra over length 1/weight, recording shortest-path counts and predecessors."""
    dist = {source: 0.0}
    sigma = defaultdict(float)
    sigma[source] = 1.0
    preds: dict[str, list[str]] = defaultdict(list)
    order = []
    done = set()
    heap = [(0.0, pos[source], source)]
    while heap:
        d, _, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        order.append(v)
        for w, weight in adj[v].items():
            if w in done:
                continue
            nd = d + 1.0 / weight
            cur = dist.get(w)
            if cur is None or (nd < cur and not _close(nd, cur)):
                dist[w] = nd
                sigma[w] = sigma[v]
                preds[w] = [v]
                heapq.heappush(heap, (nd, pos[w], w))
            elif _close(nd, cur):
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, sigma, preds


def _betweenness(adj, nodes: Iterable[str], pos) -> dict[Edge, float]:
    scores: dict[Edge, float] = defaultdict(float)
    for s in nodes:
        order, sigma, preds = _single_source(adj, s, pos)
        delta = defaultdict(float)
        for w in reversed(order):
            for v in preds[w]:
                share = sigma[v] / sigma[w] * (1.0 + delta[w])
                key = (v, w) if pos[v] < pos[w] else (w, v)
                scores[key] += share
                delta[v] += share
    # every unordered pair was counted from both ends
    return {e: x / 2.0 for e, x in scores.items()}


def edge_betweenness(g: WeightedGraph) -> dict[Edge, float]:
    """Shortest-path edge betweenness summed over unordered node pairs.

    Path length is the sum of 1/weight, so strongly correlated classes
    sit close together. Equal-length paths share credit fractionally.
    """
    if not g.nodes:
        raise ValueError("empty graph")
    pos = {n: i for i, n in enumerate(g.nodes)}
    scores = _betweenness(g.adjacency(), g.nodes, pos)
    return {e: scores.get(e, 0.0) for e in g.edges}


def connected_components(g: WeightedGraph) -> list[tuple[str, ...]]:
    adj = g.adjacency()
    pos = {n: i for i, n in enumerate(g.nodes)}
    seen = set()
    comps = []
    for n in g.nodes:
        if n in seen:
            continue
        stack, comp = [n], []
        seen.add(n)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(tuple(sorted(comp, key=pos.__getitem__)))
    return comps


def modularity(g: WeightedGraph, communities: Sequence[Iterable[str]]) -> float:
    """Weighted Newman modularity; 0 for a graph without edges."""
    m = sum(g.edges.values())
    if m == 0:
        return 0.0
    label = {n: k for k, comm in enumerate(communities) for n in comm}
    internal = defaultdict(float)
    cut = defaultdict(float)
    for (u, v), w in g.edges.items():
        if label[u] == label[v]:
            internal[label[u]] += w
        else:
            cut[label[u]] += w
            cut[label[v]] += w
    # degree = 2 * internal + cut, summed so one community scores exactly 0
    return sum(
        internal[c] / m - ((2 * internal[c] + cut[c]) / (2 * m)) ** 2 for c in set(internal) | set(cut)
    )


def _canonical(comms: list[tuple[str, ...]], pos) -> list[tuple[str, ...]]:
    return sorted(comms, key=lambda c: (-len(c), pos[c[0]]))


def detect_communities(g: WeightedGraph) -> CommunityPartition:
    """Girvan-Newman: drop the highest-betweenness edge until none remain.

    Every partition along the way is scored by modularity on the input
    graph; the best one is returned (earliest on ties). Ties between
    edges go to the first edge in canonical order.
    """
    pos = {n: i for i, n in enumerate(g.nodes)}
    current = WeightedGraph(g.nodes, dict(g.edges))
    comps = connected_components(current)
    best = (modularity(g, comps), comps)
    adj = current.adjacency()
    scores = _betweenness(adj, g.nodes, pos)
    edges = dict(current.edges)
    while edges:
        top = max(scores.get(e, 0.0) for e in edges)
        edge = next(e for e in edges if _close(scores.get(e, 0.0), top))
        u, v = edge
        del edges[edge]
        del adj[u][v], adj[v][u]
        current = WeightedGraph(g.nodes, edges)
        new_comps = connected_components(current)
        # only the component(s) touching the removed edge change
        touched = [c for c in new_comps if u in c or v in c]
        affected = {n for c in touched for n in c}
        for e in [e for e in scores if e[0] in affected]:
            del scores[e]
        scores.update(_betweenness(adj, sorted(affected, key=pos.__getitem__), pos))
        if len(new_comps) > len(comps):
            q = modularity(g, new_comps)
            if q > best[0] + 1e-12:
                best = (q, new_comps)
        comps = new_comps
    return CommunityPartition(_canonical(best[1], pos), best[0])


def graph_to_dict(g: WeightedGraph, partition: CommunityPartition | None = None) -> dict:
    member = partition.membership() if partition else {}
    return {
        "nodes": [{"id": n, "community": member.get(n)} for n in g.nodes],
        "edges": [{"source": u, "target": v, "weight": w} for (u, v), w in g.edges.items()],
        "modularity": partition.modularity if partition else None,
    }


def graph_from_dict(doc: dict) -> tuple[WeightedGraph, CommunityPartition | None]:
    nodes = [n["id"] for n in doc["nodes"]]
    g = WeightedGraph.from_edges(nodes, ((e["source"], e["target"], e["weight"]) for e in doc["edges"]))
    if doc.get("modularity") is None:
        return g, None
    groups: dict[int, list[str]] = defaultdict(list)
    for n in doc["nodes"]:
        groups[n["community"]].append(n["id"])
    return g, CommunityPartition([tuple(groups[k]) for k in sorted(groups)], doc["modularity"])


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(g: WeightedGraph, partition: CommunityPartition | None = None) -> str:
    member = partition.membership() if partition else {}
    lines = ["graph classes {", "  node [style=filled, colorscheme=set312];"]
    for n in g.nodes:
        if n in member:
            k = member[n]
            lines.append(f"  {_dot_id(n)} [community={k}, fillcolor={k % 12 + 1}];")
        else:
            lines.append(f"  {_dot_id(n)};")
    for (u, v), w in g.edges.items():
        lines.append(f"  {_dot_id(u)} -- {_dot_id(v)} [weight={w:.6f}, label=\"{w:.2f}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def emit_graph(g: WeightedGraph, partition: CommunityPartition | None, path: str | Path, format: str = "json") -> Path:
    path = Path(path)
    if format == "json":
        text = json.dumps(graph_to_dict(g, partition), indent=1) + "\n"
    elif format == "dot":
        text = graph_to_dot(g, partition)
    else:
        raise ValueError(f"unknown graph format {format!r}")
    path.write_text(text, encoding="utf-8")
    return path

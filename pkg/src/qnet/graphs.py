"""Network families, serialization and graph metrics.

Nodes are 0-based integers throughout the Python API. The edge-list text
format uses 1-based labels, matching the usual convention of writing node 1
as the source.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, UndefinedCorrelation

UNREACHABLE = -1
DEGENERATE = None


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n_nodes-1``.

    ``edges`` holds sorted pairs ``(i, j)`` with ``i < j``.
    """

    n_nodes: int
    edges: frozenset

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidArgument(f"n_nodes must be positive, got {self.n_nodes}")
        for i, j in self.edges:
            if not (0 <= i < j < self.n_nodes):
                raise InvalidArgument(f"invalid edge ({i}, {j}) for {self.n_nodes} nodes")

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int]], strict: bool = True) -> "Graph":
        """Build a graph, normalizing pair order.

        With ``strict`` set, self-loops and duplicate edges raise instead of
        being dropped.
        """
        seen = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                if strict:
                    raise InvalidArgument(f"self-loop at node {a}")
                continue
            e = (a, b) if a < b else (b, a)
            if e in seen and strict:
                raise InvalidArgument(f"duplicate edge {e}")
            seen.add(e)
        return cls(n_nodes, frozenset(seen))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.sorted_edges():
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Return the graph with node ``v`` renamed to ``perm[v]``."""
        return Graph.from_edges(self.n_nodes, ((perm[i], perm[j]) for i, j in self.edges))

    def without(self, removed: Iterable[tuple[int, int]]) -> "Graph":
        drop = {(min(a, b), max(a, b)) for a, b in removed}
        return Graph(self.n_nodes, self.edges - drop)

    # serialization

    def to_edgelist(self) -> str:
        lines = [f"N {self.n_nodes}"]
        lines += [f"{i + 1} {j + 1}" for i, j in self.sorted_edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> "Graph":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 2 or rows[0][0] != "N":
            raise InvalidArgument("edge list must start with 'N <n_nodes>'")
        n = int(rows[0][1])
        edges = []
        for row in rows[1:]:
            if len(row) != 2:
                raise InvalidArgument(f"malformed edge line: {' '.join(row)!r}")
            i, j = int(row[0]), int(row[1])
            if not (1 <= i <= n and 1 <= j <= n):
                raise InvalidArgument(f"edge ({i}, {j}) out of range 1..{n}")
            edges.append((i - 1, j - 1))
        return cls.from_edges(n, edges, strict=True)

    def to_json(self) -> str:
        return json.dumps({"n_nodes": self.n_nodes, "edges": [[i + 1, j + 1] for i, j in self.sorted_edges()]})

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        doc = json.loads(text)
        n = int(doc["n_nodes"])
        return cls.from_edges(n, ((i - 1, j - 1) for i, j in doc["edges"]), strict=True)


def load_graph(path) -> Graph:
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return Graph.from_json(text)
    return Graph.from_edgelist(text)


def _all_pairs(n: int) -> list[tuple[int, int]]:
    return list(combinations(range(n), 2))


def complete_graph(n: int) -> Graph:
    if n < 2:
        raise InvalidArgument(f"complete graph needs N >= 2, got {n}")
    return Graph(n, frozenset(_all_pairs(n)))


def random_removal_graph(n: int, n_removed: int, rng=None) -> Graph:
    """Complete graph on ``n`` nodes with ``n_removed`` edges deleted uniformly.

    Connectivity is not enforced.
    """
    pairs = _all_pairs(n)
    if not 0 <= n_removed <= len(pairs):
        raise InvalidArgument(f"n_removed must lie in [0, {len(pairs)}], got {n_removed}")
    rng = _as_rng(rng)
    drop = rng.choice(len(pairs), size=n_removed, replace=False)
    dropped = {pairs[k] for k in drop.tolist()}
    return Graph(n, frozenset(p for p in pairs if p not in dropped))


def max_ws_k(n: int) -> int:
    return n // 2 if n % 2 == 0 else (n - 1) // 2


def watts_strogatz_graph(n: int, k: int, p: float, rng=None) -> Graph:
    """Watts-Strogatz small-world graph.

    Ring lattice with ``k`` neighbours on each side, then each lattice edge
    ``(u, u + j)`` is visited for ``u`` ascending and ``j = 1..k`` and, with
    probability ``p``, its far endpoint is moved to a node drawn uniformly
    from those that create neither a self-loop nor a duplicate edge. When no
    such node exists the edge stays.
    """
    if n < 3:
        raise InvalidArgument(f"Watts-Strogatz needs N >= 3, got {n}")
    if not 1 <= k <= max_ws_k(n):
        raise InvalidArgument(f"k must lie in [1, {max_ws_k(n)}] for N={n}, got {k}")
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument(f"p must lie in [0, 1], got {p}")
    rng = _as_rng(rng)

    nbrs = [set() for _ in range(n)]
    for u in range(n):
        for j in range(1, k + 1):
            v = (u + j) % n
            nbrs[u].add(v)
            nbrs[v].add(u)

    for u in range(n):
        for j in range(1, k + 1):
            v = (u + j) % n
            # the draw happens for every lattice slot so the stream layout
            # does not depend on earlier rewiring outcomes
            if rng.random() >= p or v not in nbrs[u]:
                continue
            candidates = [w for w in range(n) if w != u and w not in nbrs[u]]
            if not candidates:
                continue
            w = candidates[int(rng.integers(len(candidates)))]
            nbrs[u].discard(v)
            nbrs[v].discard(u)
            nbrs[u].add(w)
            nbrs[w].add(u)

    edges = {(min(u, v), max(u, v)) for u in range(n) for v in nbrs[u]}
    return Graph(n, frozenset(edges))


def perfect_matching_removal(n: int, source: int, sink: int) -> Graph:
    """Complete graph minus a perfect matching that pairs ``source`` with ``sink``.

    The other nodes are paired in ascending index order.
    """
    if n < 2 or n % 2:
        raise InvalidArgument(f"perfect matching needs an even N, got {n}")
    if source == sink or not (0 <= source < n and 0 <= sink < n):
        raise InvalidArgument("source and sink must be distinct valid nodes")
    rest = [v for v in range(n) if v not in (source, sink)]
    matching = [(source, sink)] + [(rest[i], rest[i + 1]) for i in range(0, len(rest), 2)]
    return complete_graph(n).without(matching)


def bfs_distances(g: Graph, source: int) -> list[int]:
    """Hop distances from ``source``; unreachable nodes get ``UNREACHABLE``."""
    if not 0 <= source < g.n_nodes:
        raise InvalidArgument(f"source {source} out of range")
    nbrs = g.neighbors()
    dist = [UNREACHABLE] * g.n_nodes
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if dist[v] == UNREACHABLE:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def select_sink(g: Graph, source: int = 0):
    """Farthest reachable node from ``source`` (smallest index on ties).

    Returns ``DEGENERATE`` (``None``) when the source has no neighbours.
    """
    dist = bfs_distances(g, source)
    best = max(dist)
    if best <= 0:
        return DEGENERATE
    return dist.index(best)


@dataclass
class GraphMetrics:
    degree: np.ndarray
    closeness: np.ndarray
    betweenness: np.ndarray
    eigenvector: np.ndarray
    mean_clustering: float
    transitivity: float
    extra_clustering: float | None = None


def eigenvector_centrality(a: np.ndarray, tol: float = 1e-10, max_iter: int = 100000) -> np.ndarray:
    n = a.shape[0]
    if not a.any():
        return np.full(n, 1.0 / np.sqrt(n))
    # shifting by the identity keeps the leading eigenvector and breaks the
    # +/- lambda tie of bipartite graphs
    m = a + np.eye(n)
    x = np.ones(n) / np.sqrt(n)
    for _ in range(max_iter):
        y = m @ x
        y /= np.linalg.norm(y)
        if np.abs(y - x).sum() < n * tol:
            return y
        x = y
    return x


def _to_networkx(g: Graph):
    import networkx as nx

    G = nx.Graph()
    G.add_nodes_from(range(g.n_nodes))
    G.add_edges_from(g.sorted_edges())
    return G


def compute_metrics(g: Graph, extra_clustering: str | None = "square") -> GraphMetrics:
    """Centralities and clustering coefficients of ``g``.

    Closeness uses the harmonic convention ``sum_j 1/d_ij / (N - 1)`` so that
    disconnected graphs are handled and isolated nodes score 0.
    ``extra_clustering`` selects a third clustering statistic: ``"square"``
    (mean square clustering), ``"nonzero"`` (mean local clustering over nodes
    of degree >= 2) or ``None``.
    """
    import networkx as nx

    n = g.n_nodes
    if n < 1:
        raise InvalidArgument("empty graph")
    G = _to_networkx(g)
    closeness = np.zeros(n)
    if n > 1:
        for v in range(n):
            d = np.array([x for x in bfs_distances(g, v) if x > 0], dtype=float)
            closeness[v] = (1.0 / d).sum() / (n - 1)
    btw = nx.betweenness_centrality(G, normalized=True)
    local = nx.clustering(G)

    extra = None
    if extra_clustering == "square":
        extra = float(np.mean(list(nx.square_clustering(G).values())))
    elif extra_clustering == "nonzero":
        deg = g.degrees()
        vals = [local[v] for v in range(n) if deg[v] >= 2]
        extra = float(np.mean(vals)) if vals else 0.0
    elif extra_clustering is not None:
        raise InvalidArgument(f"unknown clustering statistic {extra_clustering!r}")

    return GraphMetrics(
        degree=g.degrees().astype(float),
        closeness=closeness,
        betweenness=np.array([btw[v] for v in range(n)]),
        eigenvector=eigenvector_centrality(g.adjacency()),
        mean_clustering=float(np.mean([local[v] for v in range(n)])),
        transitivity=float(nx.transitivity(G)),
        extra_clustering=extra,
    )


def correlate(x, y) -> tuple[float, float]:
    """Pearson and Spearman coefficients of two equal-length samples."""
    from scipy import stats

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("x and y must be 1-D and of equal length")
    if len(x) < 3:
        raise InvalidArgument("need at least 3 samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelation("correlation undefined for constant input")
    pearson = float(np.clip(stats.pearsonr(x, y)[0], -1.0, 1.0))
    spearman = float(np.clip(stats.spearmanr(x, y)[0], -1.0, 1.0))
    return pearson, spearman

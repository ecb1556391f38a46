"""AS-level physical network: generation, node placement and hop-count queries."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TopologyError(ValueError):
    """Raised for invalid topology parameters or a disconnected AS graph."""


@dataclass
class AsGraph:
    as_count: int
    edges: set[tuple[int, int]]
    hop_matrix: np.ndarray = field(repr=False)

    @property
    def diameter(self) -> int:
        return int(self.hop_matrix.max()) if self.as_count else 0

    def adjacency(self) -> list[list[int]]:
        return _adjacency(self.as_count, self.edges)


@dataclass
class Placement:
    node_as: list[int]

    def __len__(self) -> int:
        return len(self.node_as)


def _norm(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def _adjacency(n: int, edges) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in sorted(edges):
        adj[u].append(v)
        adj[v].append(u)
    return adj


def generate_ba_graph(as_count: int, edges_per_node: int, seed) -> AsGraph:
    """Barabási–Albert preferential attachment on ``as_count`` ASes.

    Seeded with a complete graph on ``m0 = edges_per_node`` nodes; every later
    node attaches ``edges_per_node`` edges to distinct existing nodes chosen
    with probability proportional to degree. ``as_count=15, edges_per_node=4``
    yields exactly 50 links.
    """
    m = edges_per_node
    if m < 1 or as_count <= m:
        raise TopologyError(
            f"need as_count > edges_per_node >= 1, got as_count={as_count}, edges_per_node={m}"
        )
    rng = np.random.default_rng(seed)
    edges: set[tuple[int, int]] = set()
    # degree-repeated list: node u appears deg(u) times
    targets: list[int] = []
    for u in range(m):
        for v in range(u + 1, m):
            edges.add((u, v))
            targets += [u, v]
    for new in range(m, as_count):
        if not targets:
            # m == 1: the seed graph is a single node with degree 0
            chosen = {0}
        else:
            chosen = set()
            while len(chosen) < m:
                chosen.add(targets[int(rng.integers(len(targets)))])
        for v in sorted(chosen):
            edges.add(_norm(new, v))
            targets += [new, v]
    return AsGraph(as_count, edges, all_pairs_hops(as_count, edges))


def single_as_graph() -> AsGraph:
    return AsGraph(1, set(), np.zeros((1, 1), dtype=np.int64))


def build_as_graph(as_count: int, edges_per_node: int, seed) -> AsGraph:
    if as_count == 1:
        return single_as_graph()
    return generate_ba_graph(as_count, edges_per_node, seed)


def all_pairs_hops(as_count: int, edges) -> np.ndarray:
    """BFS hop counts between every pair of ASes."""
    adj = _adjacency(as_count, edges)
    hops = np.full((as_count, as_count), -1, dtype=np.int64)
    for src in range(as_count):
        row = hops[src]
        row[src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if row[v] < 0:
                    row[v] = row[u] + 1
                    queue.append(v)
    if (hops < 0).any():
        raise TopologyError("AS graph is disconnected")
    return hops


def physical_distance(placement: Placement, hop_matrix: np.ndarray, i: int, j: int) -> int:
    try:
        a, b = placement.node_as[i], placement.node_as[j]
    except IndexError:
        raise KeyError(f"node {i if i >= len(placement.node_as) else j} is not placed") from None
    return int(hop_matrix[a, b]) + 1


def place_nodes(
    graph: AsGraph,
    oss_count: int,
    peer_count: int,
    seed,
    per_as: list[int] | None = None,
) -> Placement:
    """Assign OSS nodes then peers to ASes.

    Uniform random by default. ``per_as`` gives a fixed count per AS instead,
    filled in node-id order, for reproducible tests.
    """
    if oss_count < 1 or peer_count < 1:
        raise TopologyError("oss_count and peer_count must be >= 1")
    total = oss_count + peer_count
    if per_as is not None:
        if len(per_as) != graph.as_count or sum(per_as) != total:
            raise TopologyError("per_as must list one count per AS summing to the node count")
        node_as = [a for a, c in enumerate(per_as) for _ in range(c)]
        return Placement(node_as)
    rng = np.random.default_rng(seed)
    return Placement(rng.integers(graph.as_count, size=total).tolist())


def dump_topology(graph: AsGraph, placement: Placement, path) -> None:
    lines = [f"{graph.as_count} {len(graph.edges)}"]
    lines += [f"{u} {v}" for u, v in sorted(graph.edges)]
    lines += [f"{node} {a}" for node, a in enumerate(placement.node_as)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_topology(path) -> tuple[AsGraph, Placement]:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    try:
        as_count, edge_count = int(rows[0][0]), int(rows[0][1])
        edges = {_norm(int(u), int(v)) for u, v in rows[1 : 1 + edge_count]}
        placed = rows[1 + edge_count :]
        node_as = [0] * len(placed)
        for node, a in placed:
            node_as[int(node)] = int(a)
    except (IndexError, ValueError) as exc:
        raise TopologyError(f"malformed topology file {path}: {exc}") from exc
    if len(edges) != edge_count:
        raise TopologyError(f"{path}: expected {edge_count} distinct edges, found {len(edges)}")
    return AsGraph(as_count, edges, all_pairs_hops(as_count, edges)), Placement(node_as)

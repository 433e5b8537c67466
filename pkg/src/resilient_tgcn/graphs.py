"""Undirected simple graphs over bus indices, plus the set algebra used to
combine physical and measurement-derived topologies."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Graph",
    "new_graph",
    "normalized_adjacency",
    "or_merge",
    "edge_overlap",
    "is_connected",
    "connected_components",
    "load_edge_list",
    "save_edge_list",
]


def _canonical(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Immutable undirected simple graph on nodes 0..num_nodes-1."""

    num_nodes: int
    edges: frozenset

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        a.setflags(write=False)
        return a

    def has_edge(self, i: int, j: int) -> bool:
        return _canonical(i, j) in self.edges

    def neighbors(self, i: int) -> list:
        out = [j if a == i else a for a, j in self.edges if i in (a, j)]
        return sorted(out)

    def sorted_edges(self) -> list:
        return sorted(self.edges)


def new_graph(num_nodes: int, edge_list) -> Graph:
    """Build a graph from (i, j) pairs; either orientation, duplicates collapse."""
    if num_nodes < 1:
        raise ValueError(f"num_nodes must be positive, got {num_nodes}")
    edges = set()
    for i, j in edge_list:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"self-loop on node {i} is not allowed")
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            raise ValueError(f"edge ({i},{j}) out of range for {num_nodes} nodes")
        edges.add(_canonical(i, j))
    return Graph(num_nodes=num_nodes, edges=frozenset(edges))


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Self-looped symmetric degree normalization D^{-1/2} (A+I) D^{-1/2}."""
    a_tilde = g.adjacency + np.eye(g.num_nodes)
    d_tilde = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d_tilde)
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def or_merge(base: Graph, knowledge: Graph) -> Graph:
    """Edge-wise binary OR of two topologies on the same node set."""
    if base.num_nodes != knowledge.num_nodes:
        raise ValueError(
            f"node counts differ: {base.num_nodes} vs {knowledge.num_nodes}"
        )
    return Graph(num_nodes=base.num_nodes, edges=base.edges | knowledge.edges)


def edge_overlap(a: Graph, b: Graph):
    """Partition the edge union: (common, only in a, only in b)."""
    if a.num_nodes != b.num_nodes:
        raise ValueError(f"node counts differ: {a.num_nodes} vs {b.num_nodes}")
    common = len(a.edges & b.edges)
    return (common, len(a.edges) - common, len(b.edges) - common)


def connected_components(g: Graph) -> list:
    """Connected components as sorted lists of node indices (BFS)."""
    adj = {i: [] for i in range(g.num_nodes)}
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * g.num_nodes
    comps = []
    for start in range(g.num_nodes):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        queue = [start]
        while queue:
            node = queue.pop()
            for nb in adj[node]:
                if not seen[nb]:
                    seen[nb] = True
                    comp.append(nb)
                    queue.append(nb)
        comps.append(sorted(comp))
    return comps


def is_connected(g: Graph) -> bool:
    return len(connected_components(g)) == 1


def save_edge_list(g: Graph, path, header_lines=()) -> None:
    """Write the `i j` edge-list format with optional provenance comments."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# nodes={g.num_nodes}\n")
        for i, j in g.sorted_edges():
            fh.write(f"{i} {j}\n")


def load_edge_list(path, num_nodes: int | None = None) -> Graph:
    """Read the `i j` edge-list format; node count from the `# nodes=` header
    unless given explicitly."""
    edges = []
    header_nodes = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                stripped = line.lstrip("#").strip()
                if stripped.startswith("nodes="):
                    header_nodes = int(stripped.split("=", 1)[1])
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected `i j`, got {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
    n = num_nodes if num_nodes is not None else header_nodes
    if n is None:
        raise ValueError(f"{path}: node count not given and no `# nodes=` header")
    return new_graph(n, edges)

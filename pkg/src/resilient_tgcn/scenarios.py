"""Enumeration of single-link topology inaccuracies: removals of existing
lines and additions of plausible (geometrically nearby) phantom lines.

Each spec is anchored to one endpoint so per-node averages can attribute a
scenario to the bus it perturbs; a physical edge therefore appears once per
endpoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Graph

__all__ = [
    "REMOVAL",
    "ADDITION",
    "ScenarioSpec",
    "make_spec",
    "enumerate_removals",
    "enumerate_additions",
    "apply_scenario",
    "calibrate_radius",
    "save_scenarios",
    "load_scenarios",
]

REMOVAL = "removal"
ADDITION = "addition"


@dataclass(frozen=True)
class ScenarioSpec:
    """One inaccurate-topology instance: a single edge flipped, seen from an
    anchor endpoint."""

    kind: str
    edge: tuple
    anchor_node: int
    id: str

    def __post_init__(self):
        if self.kind not in (REMOVAL, ADDITION):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.anchor_node not in self.edge:
            raise ValueError(f"anchor {self.anchor_node} is not an endpoint of {self.edge}")


def make_spec(kind: str, anchor: int, i: int, j: int) -> ScenarioSpec:
    i, j = (i, j) if i < j else (j, i)
    tag = "rm" if kind == REMOVAL else "ad"
    return ScenarioSpec(
        kind=kind,
        edge=(i, j),
        anchor_node=anchor,
        id=f"{tag}-n{anchor:03d}-e{i:03d}-{j:03d}",
    )


def enumerate_removals(g: Graph) -> list:
    """One spec per (node, incident edge); every physical edge yields two
    specs with different anchors, 2M total."""
    specs = []
    incident = {n: [] for n in range(g.num_nodes)}
    for i, j in g.sorted_edges():
        incident[i].append((i, j))
        incident[j].append((i, j))
    for anchor in range(g.num_nodes):
        for i, j in incident[anchor]:
            specs.append(make_spec(REMOVAL, anchor, i, j))
    return specs


def enumerate_additions(g: Graph, coords, radius: float) -> list:
    """For every node, one spec per non-neighbor within ``radius`` (euclidean,
    on the given layout); candidates are counted per anchor."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (g.num_nodes, 2):
        raise ValueError(f"coords must be ({g.num_nodes}, 2), got {coords.shape}")
    specs = []
    for anchor in range(g.num_nodes):
        d = np.sqrt(((coords - coords[anchor]) ** 2).sum(axis=1))
        for other in range(g.num_nodes):
            if other == anchor or d[other] > radius:
                continue
            if g.has_edge(anchor, other):
                continue
            specs.append(make_spec(ADDITION, anchor, anchor, other))
    return specs


def apply_scenario(g: Graph, s: ScenarioSpec) -> Graph:
    """Graph differing from ``g`` by exactly the spec's edge; input untouched."""
    if s.kind == REMOVAL:
        if s.edge not in g.edges:
            raise ValueError(f"removal edge {s.edge} not present in graph")
        return Graph(num_nodes=g.num_nodes, edges=g.edges - {s.edge})
    if s.edge in g.edges:
        raise ValueError(f"addition edge {s.edge} already present in graph")
    return Graph(num_nodes=g.num_nodes, edges=g.edges | {s.edge})


def calibrate_radius(g: Graph, coords, target_count: int):
    """Smallest radius whose per-anchor addition count reaches ``target_count``.

    Counts are monotone in the radius (each non-edge pair inside it
    contributes two anchored specs), so the answer sits on the sorted list
    of candidate pair distances. Returns (radius, achieved_count).
    """
    coords = np.asarray(coords, dtype=np.float64)
    dists = []
    for i in range(g.num_nodes):
        for j in range(i + 1, g.num_nodes):
            if (i, j) in g.edges:
                continue
            dists.append(float(np.hypot(*(coords[i] - coords[j]))))
    dists.sort()
    if target_count > 2 * len(dists):
        raise ValueError(
            f"target {target_count} exceeds the {2 * len(dists)} specs available"
        )
    if target_count <= 0:
        return (dists[0] / 2.0 if dists else 1.0), 0
    pairs_needed = (target_count + 1) // 2
    radius = dists[pairs_needed - 1]
    achieved = 2 * int(np.searchsorted(np.asarray(dists), radius, side="right"))
    return radius, achieved


def save_scenarios(specs, path) -> None:
    """Scenario manifest: one `kind anchor i j id` line per spec."""
    with open(path, "w") as fh:
        fh.write("# kind anchor i j id\n")
        for s in specs:
            fh.write(f"{s.kind} {s.anchor_node} {s.edge[0]} {s.edge[1]} {s.id}\n")


def load_scenarios(path) -> list:
    specs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {line!r}")
            kind, anchor, i, j, sid = parts
            spec = ScenarioSpec(
                kind=kind, edge=(int(i), int(j)), anchor_node=int(anchor), id=sid
            )
            specs.append(spec)
    return specs

import numpy as np
import pytest

from conftest import random_graph
from resilient_tgcn.graphs import new_graph
from resilient_tgcn.scenarios import (
    ADDITION,
    REMOVAL,
    ScenarioSpec,
    apply_scenario,
    calibrate_radius,
    enumerate_additions,
    enumerate_removals,
    load_scenarios,
    make_spec,
    save_scenarios,
)


def test_triangle_removals():
    g = new_graph(3, [(0, 1), (1, 2), (0, 2)])
    specs = enumerate_removals(g)
    assert len(specs) == 6


def test_star_removals_center_anchored():
    g = new_graph(4, [(0, 1), (0, 2), (0, 3)])
    specs = enumerate_removals(g)
    assert len(specs) == 6
    assert sum(1 for s in specs if s.anchor_node == 0) == 3


def test_removals_are_2m_each_edge_twice():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = random_graph(rng, int(rng.integers(2, 12)))
        specs = enumerate_removals(g)
        assert len(specs) == 2 * g.num_edges
        seen = {}
        for s in specs:
            assert s.kind == REMOVAL
            assert s.anchor_node in s.edge
            seen[s.edge] = seen.get(s.edge, 0) + 1
        assert all(v == 2 for v in seen.values())
        assert len({s.id for s in specs}) == len(specs)


def test_additions_collinear_example():
    # nodes at x = 0, 1, 2 with edge (0,1); radius 1.5 admits only pair (1,2),
    # seen from both anchors
    g = new_graph(3, [(0, 1)])
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    specs = enumerate_additions(g, coords, radius=1.5)
    assert len(specs) == 2
    assert all(s.edge == (1, 2) and s.kind == ADDITION for s in specs)
    assert {s.anchor_node for s in specs} == {1, 2}


def test_additions_zero_when_radius_too_small():
    g = new_graph(3, [])
    coords = np.array([[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]])
    assert enumerate_additions(g, coords, radius=1.0) == []


def test_additions_radius_validation():
    g = new_graph(2, [])
    with pytest.raises(ValueError, match="radius"):
        enumerate_additions(g, np.zeros((2, 2)), radius=0.0)


def test_additions_monotone_in_radius():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 10)
    coords = rng.uniform(0, 100, size=(10, 2))
    counts = [
        len(enumerate_additions(g, coords, r)) for r in (5.0, 20.0, 50.0, 150.0)
    ]
    assert counts == sorted(counts)


def test_apply_removal_and_readd_roundtrip():
    g = new_graph(4, [(0, 1), (1, 2), (2, 3)])
    spec = make_spec(REMOVAL, 1, 1, 2)
    removed = apply_scenario(g, spec)
    assert removed.num_edges == g.num_edges - 1
    assert g.num_edges == 3  # input untouched
    back = apply_scenario(removed, make_spec(ADDITION, 1, 1, 2))
    assert back.edges == g.edges


def test_apply_changes_exactly_one_pair():
    rng = np.random.default_rng(2)
    g = random_graph(rng, 8, p=0.5)
    specs = enumerate_removals(g)
    s = specs[0]
    out = apply_scenario(g, s)
    diff = np.argwhere(out.adjacency != g.adjacency)
    assert len(diff) == 2  # symmetric pair


def test_apply_inconsistent_spec_errors():
    g = new_graph(3, [(0, 1)])
    with pytest.raises(ValueError, match="not present"):
        apply_scenario(g, make_spec(REMOVAL, 1, 1, 2))
    with pytest.raises(ValueError, match="already present"):
        apply_scenario(g, make_spec(ADDITION, 0, 0, 1))


def test_spec_validation():
    with pytest.raises(ValueError, match="anchor"):
        ScenarioSpec(kind=REMOVAL, edge=(0, 1), anchor_node=2, id="x")
    with pytest.raises(ValueError, match="kind"):
        ScenarioSpec(kind="mutate", edge=(0, 1), anchor_node=0, id="x")


def test_calibrate_radius_extremes():
    rng = np.random.default_rng(3)
    g = new_graph(5, [(0, 1)])
    coords = rng.uniform(0, 10, size=(5, 2))
    r0, c0 = calibrate_radius(g, coords, 0)
    assert c0 == 0
    assert len(enumerate_additions(g, coords, r0)) == 0
    non_edges = 5 * 4 // 2 - 1
    r_all, c_all = calibrate_radius(g, coords, 2 * non_edges)
    assert c_all == 2 * non_edges
    assert len(enumerate_additions(g, coords, r_all)) == 2 * non_edges
    with pytest.raises(ValueError, match="exceeds"):
        calibrate_radius(g, coords, 2 * non_edges + 1)


def test_calibrate_radius_hits_exact_target():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 12, p=0.3)
    coords = rng.uniform(0, 100, size=(12, 2))
    for target in (2, 6, 10):
        r, achieved = calibrate_radius(g, coords, target)
        assert achieved == target  # continuous coords: no ties
        assert len(enumerate_additions(g, coords, r)) == achieved


def test_manifest_roundtrip(tmp_path):
    g = new_graph(5, [(0, 1), (1, 2), (3, 4)])
    specs = enumerate_removals(g)
    path = tmp_path / "scen.txt"
    save_scenarios(specs, path)
    loaded = load_scenarios(path)
    assert loaded == specs

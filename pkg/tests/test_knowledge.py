import numpy as np
import pytest

import resilient_tgcn.autodiff as ad
from resilient_tgcn.datasets import TimeSeriesDataset
from resilient_tgcn.graphs import new_graph
from resilient_tgcn.knowledge import (
    GatLayer,
    KgConfig,
    build_kg,
    calibrate_kg_threshold,
    cosine_kg,
    cosine_similarity_matrix,
    dataset_hash,
    export_kg,
    gat_forward,
    gat_kg,
    pearson_correlation_matrix,
    pearson_kg,
)


def make_ds(values):
    values = np.asarray(values, dtype=np.float64)
    scale = np.abs(values).max() or 1.0
    return TimeSeriesDataset(values=values / scale, sample_rate=1.0, scale=scale)


@pytest.fixture(scope="module")
def toy_ds():
    rng = np.random.default_rng(0)
    base = rng.standard_normal((3, 40))
    rows = [
        base[0],
        2.0 * base[0],            # cosine-identical to row 0
        base[1],
        3.0 * base[1] + 5.0,      # pearson-identical to row 2
        base[2],
    ]
    return make_ds(np.vstack(rows))


def test_cosine_scale_invariance(toy_ds):
    s, valid = cosine_similarity_matrix(toy_ds.values)
    assert valid.all()
    assert abs(s[0, 1] - 1.0) < 1e-12


def test_cosine_orthogonal_is_zero():
    ds = make_ds([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
    s, _ = cosine_similarity_matrix(ds.values)
    assert abs(s[0, 1]) < 1e-12


def test_similarity_matrices_symmetric_bounded(desk_train_dataset):
    for matrix, valid in (
        cosine_similarity_matrix(desk_train_dataset.values),
        pearson_correlation_matrix(desk_train_dataset.values),
    ):
        sub = matrix[np.ix_(valid, valid)]
        assert np.allclose(sub, sub.T, atol=1e-12)
        assert sub.max() <= 1.0 + 1e-12 and sub.min() >= -1.0 - 1e-12
        assert np.allclose(np.diag(sub), 1.0, atol=1e-12)


def test_pearson_affine_invariance(toy_ds):
    c, _ = pearson_correlation_matrix(toy_ds.values)
    assert abs(c[2, 3] - 1.0) < 1e-12


def test_pearson_anticorrelated():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(30)
    c, _ = pearson_correlation_matrix(np.vstack([v, -v]))
    assert abs(c[0, 1] + 1.0) < 1e-12
    ds = make_ds(np.vstack([v, -v]))
    assert pearson_kg(ds, 0.5).num_edges == 0


def test_cosine_kg_edge_set_scale_invariant(desk_train_dataset):
    scaled = TimeSeriesDataset(
        values=desk_train_dataset.values
        * np.linspace(0.5, 2.0, 118)[:, None],
        sample_rate=1.0,
        scale=1.0,
    )
    a = cosine_kg(desk_train_dataset, alpha=3.0)
    b = cosine_kg(scaled, alpha=3.0)
    assert a.edges == b.edges


def test_pearson_kg_edge_set_affine_invariant(desk_train_dataset):
    rng = np.random.default_rng(2)
    a_coef = rng.uniform(0.5, 2.0, size=(118, 1))
    b_coef = rng.uniform(-3.0, 3.0, size=(118, 1))
    # slack-bus row is constant zero in both; transformed stays constant
    transformed = TimeSeriesDataset(
        values=np.clip(desk_train_dataset.values * a_coef + b_coef, -50, 50),
        sample_rate=1.0,
        scale=1.0,
    )
    with pytest.warns(UserWarning):
        a = pearson_kg(desk_train_dataset, 0.999)
    with pytest.warns(UserWarning):
        b = pearson_kg(transformed, 0.999)
    assert a.edges == b.edges


def test_degenerate_series_excluded_with_warning():
    rng = np.random.default_rng(3)
    vals = rng.standard_normal((4, 20))
    vals[2] = 0.0
    ds = make_ds(vals)
    with pytest.warns(UserWarning, match=r"\[2\]"):
        g = cosine_kg(ds, alpha=0.001)
    assert all(2 not in e for e in g.edges)


def test_all_constant_dataset_errors():
    ds = TimeSeriesDataset(values=np.ones((3, 10)), sample_rate=1.0, scale=1.0)
    with pytest.raises(ValueError, match="no valid"):
        pearson_kg(ds, 0.5)


def test_kg_has_no_self_loops(desk_train_dataset):
    g = cosine_kg(desk_train_dataset, alpha=3.0)
    assert all(i != j for i, j in g.edges)


def test_calibrate_extremes(toy_ds):
    thr, count = calibrate_kg_threshold(toy_ds, "pearson", 0)
    assert count == 0 and pearson_kg(toy_ds, thr).num_edges == 0
    total = 5 * 4 // 2
    thr, count = calibrate_kg_threshold(toy_ds, "pearson", total)
    assert count == total and pearson_kg(toy_ds, thr).num_edges == total
    with pytest.raises(ValueError, match="unreachable"):
        calibrate_kg_threshold(toy_ds, "pearson", total + 1)
    with pytest.raises(ValueError, match="cosine/pearson"):
        calibrate_kg_threshold(toy_ds, "gat", 3)


def test_calibrate_midrange_builder_agreement(desk_train_dataset):
    with pytest.warns(UserWarning):
        alpha, achieved = calibrate_kg_threshold(desk_train_dataset, "cosine", 150)
    assert abs(achieved - 150) <= 2
    with pytest.warns(UserWarning):
        built = cosine_kg(desk_train_dataset, alpha)
    assert built.num_edges == achieved


def test_gat_forward_single_node():
    rng = np.random.default_rng(4)
    layer = GatLayer.init(3, 4, rng)
    out, mu = gat_forward(np.ones((1, 3)), new_graph(1, []), layer)
    assert np.allclose(mu.data, [[1.0]], atol=1e-15)
    assert out.data.shape == (1, 4)


def test_gat_forward_identical_nodes_split_attention():
    rng = np.random.default_rng(5)
    layer = GatLayer.init(2, 3, rng)
    x = np.tile([[0.3, -0.7]], (2, 1))
    _, mu = gat_forward(x, new_graph(2, [(0, 1)]), layer)
    assert np.allclose(mu.data, 0.5, atol=1e-12)


def test_gat_forward_masked_rows_sum_to_one():
    rng = np.random.default_rng(6)
    layer = GatLayer.init(4, 5, rng)
    g = new_graph(5, [(0, 1), (1, 2), (3, 4)])
    x = rng.standard_normal((5, 4))
    _, mu = gat_forward(x, g, layer)
    assert np.allclose(mu.data.sum(axis=1), 1.0, atol=1e-10)
    # non-candidates carry zero attention
    assert mu.data[0, 3] == 0.0 and mu.data[0, 4] == 0.0


def test_gat_gradient_through_attention():
    rng = np.random.default_rng(7)
    layer = GatLayer.init(3, 4, rng)
    readout = ad.parameter(rng.standard_normal((4, 1)))
    g = new_graph(4, [(0, 1), (1, 2), (2, 3)])
    x = rng.standard_normal((4, 3))
    target = rng.standard_normal((4, 1))

    def loss():
        out, _ = gat_forward(x, g, layer)
        err = ad.sub(ad.matmul(out, readout), ad.constant(target))
        return ad.mean_all(ad.hadamard(err, err))

    report = ad.finite_difference_check(loss, layer.params() + [readout], seed=8)
    assert report.passed, str(report)


def test_gat_kg_complete_target(ring6_dataset):
    g = gat_kg(ring6_dataset, target_edges=15, epochs=2, history=4, max_windows=8)
    assert g.num_edges == 15  # complete graph on 6 nodes


def test_gat_kg_exact_count_and_determinism(ring6_dataset):
    a = gat_kg(ring6_dataset, target_edges=5, epochs=3, history=4, max_windows=12, seed=9)
    b = gat_kg(ring6_dataset, target_edges=5, epochs=3, history=4, max_windows=12, seed=9)
    assert a.num_edges == 5
    assert a.edges == b.edges
    c = gat_kg(ring6_dataset, target_edges=5, epochs=3, history=4, max_windows=12, seed=10)
    assert c.num_edges == 5


def test_gat_kg_validation(ring6_dataset):
    with pytest.raises(ValueError, match="target_edges"):
        gat_kg(ring6_dataset, target_edges=0)
    with pytest.raises(ValueError, match="target_edges"):
        gat_kg(ring6_dataset, target_edges=16)


def test_kg_config_validation():
    with pytest.raises(ValueError, match="method"):
        KgConfig(method="magic")
    with pytest.raises(ValueError, match="alpha"):
        KgConfig(alpha=0.0)
    cfg = KgConfig(method="pearson", pearson_threshold=0.5)
    assert cfg.method == "pearson"


def test_build_kg_dispatch(ring6_dataset):
    assert build_kg(ring6_dataset, KgConfig(method="cosine", alpha=1.5)).num_nodes == 6
    assert build_kg(ring6_dataset, KgConfig(method="pearson", pearson_threshold=0.9)).num_nodes == 6
    g = build_kg(ring6_dataset, KgConfig(method="gat", gat_target_edges=4,
                                         gat_epochs=2, gat_history=4, gat_max_windows=6))
    assert g.num_edges == 4


def test_export_kg_provenance(tmp_path, ring6_dataset):
    g = cosine_kg(ring6_dataset, alpha=1.2)
    path = tmp_path / "kg.txt"
    export_kg(g, path, "cosine", "alpha=1.2", ring6_dataset, seed=3)
    text = path.read_text()
    assert "method=cosine" in text
    assert f"dataset_hash={dataset_hash(ring6_dataset)}" in text
    assert "seed=3" in text
    from resilient_tgcn.graphs import load_edge_list

    assert load_edge_list(path).edges == g.edges

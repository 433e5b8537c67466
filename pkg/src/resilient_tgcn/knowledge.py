"""Measurement-derived knowledge graphs.

Three builders produce an unweighted graph over the bus set from the angle
time series: thresholded cosine similarity, thresholded Pearson correlation,
and top-k edges by learned graph-attention weight. All kept links carry
implicit unit weight.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .datasets import TimeSeriesDataset
from .graphs import Graph, new_graph, save_edge_list

__all__ = [
    "KgConfig",
    "GatLayer",
    "cosine_similarity_matrix",
    "pearson_correlation_matrix",
    "cosine_kg",
    "pearson_kg",
    "gat_forward",
    "gat_kg",
    "calibrate_kg_threshold",
    "build_kg",
    "dataset_hash",
    "export_kg",
]


def cosine_similarity_matrix(values: np.ndarray):
    """Pairwise cosine similarity of row vectors; returns (S, valid) where
    ``valid`` flags rows with nonzero norm."""
    v = np.asarray(values, dtype=np.float64)
    norms = np.sqrt((v * v).sum(axis=1))
    valid = norms > 0.0
    safe = np.where(valid, norms, 1.0)
    s = (v @ v.T) / np.outer(safe, safe)
    return s, valid


def pearson_correlation_matrix(values: np.ndarray):
    """Pairwise Pearson correlation of row vectors; ``valid`` flags rows with
    nonzero variance."""
    v = np.asarray(values, dtype=np.float64)
    centered = v - v.mean(axis=1, keepdims=True)
    return cosine_similarity_matrix(centered)


def _warn_excluded(valid: np.ndarray, what: str) -> None:
    if not valid.all():
        excluded = np.flatnonzero(~valid).tolist()
        warnings.warn(
            f"excluding {len(excluded)} degenerate ({what}) node series from "
            f"knowledge-graph candidates: {excluded}",
            stacklevel=3,
        )


def _pair_values(matrix: np.ndarray, valid: np.ndarray):
    n = matrix.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if valid[i] and valid[j]]
    vals = np.array([matrix[i, j] for i, j in pairs]) if pairs else np.empty(0)
    return pairs, vals


def cosine_kg(dataset: TimeSeriesDataset, alpha: float) -> Graph:
    """Keep pairs whose cosine similarity exceeds ``alpha`` times the mean
    similarity over all candidate pairs."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    s, valid = cosine_similarity_matrix(dataset.values)
    _warn_excluded(valid, "zero norm")
    pairs, vals = _pair_values(s, valid)
    if not pairs:
        raise ValueError("no valid node pairs for cosine knowledge graph")
    threshold = alpha * float(vals.mean())
    edges = [p for p, v in zip(pairs, vals) if v > threshold]
    return new_graph(dataset.num_buses, edges)


def pearson_kg(dataset: TimeSeriesDataset, threshold: float) -> Graph:
    """Keep pairs whose Pearson correlation exceeds ``threshold``."""
    c, valid = pearson_correlation_matrix(dataset.values)
    _warn_excluded(valid, "zero variance")
    pairs, vals = _pair_values(c, valid)
    if not pairs:
        raise ValueError("no valid node pairs for pearson knowledge graph (all-constant data)")
    edges = [p for p, v in zip(pairs, vals) if v > threshold]
    return new_graph(dataset.num_buses, edges)


def calibrate_kg_threshold(dataset: TimeSeriesDataset, method: str,
                           target_edges: int, tolerance: int = 2):
    """Threshold (in the method's own parameter space) whose edge count is
    within ``tolerance`` of the target; returns (threshold, achieved_count).

    For ``cosine`` the returned value is the mean-similarity multiplier
    ``alpha``; for ``pearson`` it is the raw correlation cutoff.
    """
    if method == "cosine":
        matrix, valid = cosine_similarity_matrix(dataset.values)
        _warn_excluded(valid, "zero norm")
    elif method == "pearson":
        matrix, valid = pearson_correlation_matrix(dataset.values)
        _warn_excluded(valid, "zero variance")
    else:
        raise ValueError(f"calibration supports cosine/pearson, not {method!r}")
    pairs, vals = _pair_values(matrix, valid)
    total = len(pairs)
    if target_edges < 0 or target_edges > total:
        raise ValueError(f"target {target_edges} unreachable with {total} candidate pairs")
    sorted_desc = np.sort(vals)[::-1]
    if target_edges == 0:
        cut = float(sorted_desc[0]) + 1.0
        achieved = 0
    elif target_edges == total:
        cut = float(sorted_desc[-1]) - 1.0
        achieved = total
    else:
        hi, lo = sorted_desc[target_edges - 1], sorted_desc[target_edges]
        cut = float(hi + lo) / 2.0
        achieved = int((vals > cut).sum())
    if abs(achieved - target_edges) > tolerance:
        raise ValueError(
            f"ties force {achieved} edges; target {target_edges} unreachable "
            f"within tolerance {tolerance}"
        )
    if method == "cosine":
        s_bar = float(vals.mean())
        if s_bar <= 0 or (cut <= 0 and target_edges > 0):
            raise ValueError(
                f"cosine cutoff {cut:.4g} with mean similarity {s_bar:.4g} is not "
                f"representable by a positive alpha; pick a smaller target"
            )
        return cut / s_bar, achieved
    return cut, achieved


@dataclass
class GatLayer:
    """Single attention head: shared transform W (features x hidden) and
    scoring vector a (2*hidden x 1)."""

    W: Value
    a: Value

    @classmethod
    def init(cls, feature_dim: int, hidden_dim: int, rng) -> "GatLayer":
        bw = 1.0 / np.sqrt(feature_dim)
        ba = 1.0 / np.sqrt(2 * hidden_dim)
        return cls(
            W=ad.parameter(rng.uniform(-bw, bw, size=(feature_dim, hidden_dim))),
            a=ad.parameter(rng.uniform(-ba, ba, size=(2 * hidden_dim, 1))),
        )

    def params(self):
        return [self.W, self.a]


def gat_forward(x, candidate_adj: Graph, layer: GatLayer):
    """One attention pass over the candidate graph (self-loops are always in
    the candidate mask). Returns (node outputs, attention matrix), both on
    the tape."""
    x = ad.constant(x)
    n = x.shape[0]
    if candidate_adj.num_nodes != n:
        raise ValueError(
            f"candidate graph has {candidate_adj.num_nodes} nodes, features have {n}"
        )
    hidden = layer.W.shape[1]
    h = ad.matmul(x, layer.W)
    a_src = _slice_rows(layer.a, 0, hidden)
    a_dst = _slice_rows(layer.a, hidden, 2 * hidden)
    f = ad.matmul(h, a_src)
    g = ad.matmul(h, a_dst)
    ones_row = ad.constant(np.ones((1, n)))
    ones_col = ad.constant(np.ones((n, 1)))
    e = ad.leaky_relu(ad.add(ad.matmul(f, ones_row), ad.matmul(ones_col, ad.transpose(g))))
    mask = candidate_adj.adjacency + np.eye(n)
    if not (mask == 1.0).all():
        e = ad.add(e, ad.constant((mask - 1.0) * 1e9))
    mu = ad.softmax_rows(e)
    out = ad.elu(ad.matmul(mu, h))
    return out, mu


def _slice_rows(v: Value, start: int, stop: int) -> Value:
    """Row slice as a matmul with a fixed selector, so gradients flow back."""
    rows = stop - start
    sel = np.zeros((rows, v.shape[0]))
    sel[np.arange(rows), np.arange(start, stop)] = 1.0
    return ad.matmul(ad.constant(sel), v)


def _gat_windows(values: np.ndarray, history: int, max_windows: int):
    total = values.shape[1] - history
    if total < 1:
        raise ValueError(f"need at least {history + 1} steps, got {values.shape[1]}")
    count = min(total, max_windows)
    starts = np.unique(np.linspace(0, total - 1, count).round().astype(int))
    return [
        (values[:, s:s + history], values[:, s + history:s + history + 1]) for s in starts
    ]


def gat_kg(dataset: TimeSeriesDataset, target_edges: int, epochs: int = 30,
           learning_rate: float = 1e-2, hidden_dim: int = 8, heads: int = 1,
           history: int = 10, max_windows: int = 64, seed: int = 0) -> Graph:
    """Learn attention over the complete candidate graph by one-step-ahead
    prediction, then keep the ``target_edges`` strongest symmetrized pairs.

    Pair score is (mu_ij + mu_ji)/2 averaged over the training windows; ties
    break by pair index order, so the edge count is exactly ``target_edges``
    and the result is deterministic per seed.
    """
    n = dataset.num_buses
    max_pairs = n * (n - 1) // 2
    if not (1 <= target_edges <= max_pairs):
        raise ValueError(f"target_edges must be in [1, {max_pairs}], got {target_edges}")
    rng = np.random.default_rng(seed)
    layers = [GatLayer.init(history, hidden_dim, rng) for _ in range(heads)]
    br = 1.0 / np.sqrt(hidden_dim)
    readout = ad.parameter(rng.uniform(-br, br, size=(hidden_dim, 1)))
    params = [p for layer in layers for p in layer.params()] + [readout]
    state = ad.AdamState.for_params(params, learning_rate=learning_rate)
    complete = new_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
    windows = _gat_windows(dataset.values, history, max_windows)

    for epoch in range(epochs):
        total = None
        for x, y in windows:
            outs = [gat_forward(x, complete, layer)[0] for layer in layers]
            merged = outs[0]
            for o in outs[1:]:
                merged = ad.add(merged, o)
            if heads > 1:
                merged = ad.scale(merged, 1.0 / heads)
            pred = ad.matmul(merged, readout)
            err = ad.sub(pred, ad.constant(y))
            loss = ad.mean_all(ad.hadamard(err, err))
            total = loss if total is None else ad.add(total, loss)
        total = ad.scale(total, 1.0 / len(windows))
        if not np.isfinite(total.data[0, 0]):
            raise ad.DivergenceError(
                f"GAT training diverged (non-finite loss) at epoch {epoch}, seed {seed}"
            )
        ad.backward(total)
        ad.adam_step(params, state)

    mean_mu = np.zeros((n, n))
    with ad.no_grad():
        for x, _ in windows:
            for layer in layers:
                mean_mu += gat_forward(x, complete, layer)[1].data
    mean_mu /= len(windows) * heads
    sym = 0.5 * (mean_mu + mean_mu.T)
    scored = [(-sym[i, j], i, j) for i in range(n) for j in range(i + 1, n)]
    scored.sort()
    edges = [(i, j) for _, i, j in scored[:target_edges]]
    return new_graph(n, edges)


@dataclass
class KgConfig:
    """Which knowledge-graph builder to run and with what knobs."""

    method: str = "cosine"
    alpha: float = 2.17
    pearson_threshold: float = 0.9985
    gat_target_edges: int = 230
    gat_epochs: int = 30
    gat_learning_rate: float = 1e-2
    gat_hidden_dim: int = 8
    gat_heads: int = 1
    gat_history: int = 10
    gat_max_windows: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("cosine", "pearson", "gat"):
            raise ValueError(f"unknown knowledge-graph method {self.method!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0.0 < self.pearson_threshold <= 1.0):
            raise ValueError("pearson_threshold must lie in (0, 1]")
        if self.gat_target_edges < 1:
            raise ValueError("gat_target_edges must be >= 1")


def build_kg(dataset: TimeSeriesDataset, config: KgConfig) -> Graph:
    if config.method == "cosine":
        return cosine_kg(dataset, config.alpha)
    if config.method == "pearson":
        return pearson_kg(dataset, config.pearson_threshold)
    return gat_kg(
        dataset,
        config.gat_target_edges,
        epochs=config.gat_epochs,
        learning_rate=config.gat_learning_rate,
        hidden_dim=config.gat_hidden_dim,
        heads=config.gat_heads,
        history=config.gat_history,
        max_windows=config.gat_max_windows,
        seed=config.seed,
    )


def dataset_hash(dataset: TimeSeriesDataset) -> str:
    digest = hashlib.sha256(np.ascontiguousarray(dataset.values).tobytes())
    return digest.hexdigest()[:12]


def export_kg(graph: Graph, path, method: str, detail: str,
              dataset: TimeSeriesDataset, seed: int) -> None:
    """Edge-list export with a provenance header."""
    save_edge_list(
        graph,
        path,
        header_lines=[
            f"knowledge graph, method={method}",
            f"{detail}",
            f"dataset_hash={dataset_hash(dataset)}",
            f"seed={seed}",
        ],
    )

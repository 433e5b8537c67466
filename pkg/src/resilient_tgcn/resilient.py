"""Topology-resilient model variants.

KGIM runs the baseline estimator over the bitwise-OR union of the input
topology and a measurement-derived knowledge graph. PKGIM runs two
independent conv+GRU channels (input topology, knowledge graph) and fuses
their final node embeddings with a learned aggregator; the whole pipeline
trains end-to-end against a single loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._base import check_is_fitted
from .autodiff import Value
from .graphs import Graph, normalized_adjacency, or_merge
from .tgcn import (
    TgcnParams,
    TgcnRegressor,
    _RecurrentEstimator,
    batched_hidden,
    init_uniform,
    tgcn_hidden,
)

__all__ = [
    "SlpParams",
    "MlpParams",
    "AttnParams",
    "slp_aggregate",
    "mlp_aggregate",
    "attention_aggregate",
    "PkgimModel",
    "pkgim_forward",
    "KgimRegressor",
    "PkgimRegressor",
    "VARIANTS",
    "make_model",
]


@dataclass
class SlpParams:
    """Per-channel linear transforms, then one post-concat transform + ReLU."""

    W1: Value
    W2: Value
    W3: Value

    @classmethod
    def init(cls, rng, hidden_dim: int, horizon: int, agg_dim: int | None = None):
        p = agg_dim or hidden_dim
        return cls(
            W1=init_uniform(rng, hidden_dim, p, fan_in=hidden_dim),
            W2=init_uniform(rng, hidden_dim, p, fan_in=hidden_dim),
            W3=init_uniform(rng, 2 * p, horizon, fan_in=2 * p),
        )

    def params(self):
        return [self.W1, self.W2, self.W3]

    def named(self, prefix: str = "agg."):
        return {prefix + "W1": self.W1, prefix + "W2": self.W2, prefix + "W3": self.W3}


@dataclass
class MlpParams:
    """Concat first, hidden ReLU layer, then linear readout (unbounded)."""

    W1: Value
    W2: Value

    @classmethod
    def init(cls, rng, hidden_dim: int, horizon: int, agg_dim: int | None = None):
        m = agg_dim or hidden_dim
        return cls(
            W1=init_uniform(rng, 2 * hidden_dim, m, fan_in=2 * hidden_dim),
            W2=init_uniform(rng, m, horizon, fan_in=m),
        )

    def params(self):
        return [self.W1, self.W2]

    def named(self, prefix: str = "agg."):
        return {prefix + "W1": self.W1, prefix + "W2": self.W2}


@dataclass
class AttnParams:
    """Per-node softmax scores over the concatenated embedding columns, then
    a linear readout of the score-weighted features."""

    W: Value
    Wr: Value

    @classmethod
    def init(cls, rng, hidden_dim: int, horizon: int, agg_dim: int | None = None):
        width = 2 * hidden_dim
        return cls(
            W=init_uniform(rng, width, width, fan_in=width),
            Wr=init_uniform(rng, width, horizon, fan_in=width),
        )

    def params(self):
        return [self.W, self.Wr]

    def named(self, prefix: str = "agg."):
        return {prefix + "W": self.W, prefix + "Wr": self.Wr}


def slp_aggregate(x1, x2, params: SlpParams) -> Value:
    x1, x2 = ad.constant(x1), ad.constant(x2)
    cat = ad.concat_cols(ad.matmul(x1, params.W1), ad.matmul(x2, params.W2))
    return ad.relu(ad.matmul(cat, params.W3))


def mlp_aggregate(x1, x2, params: MlpParams) -> Value:
    cat = ad.concat_cols(ad.constant(x1), ad.constant(x2))
    return ad.matmul(ad.relu(ad.matmul(cat, params.W1)), params.W2)


def attention_aggregate(x1, x2, params: AttnParams) -> Value:
    cat = ad.concat_cols(ad.constant(x1), ad.constant(x2))
    scores = ad.softmax_rows(ad.matmul(cat, params.W))
    return ad.matmul(ad.hadamard(scores, cat), params.Wr)


_AGGREGATORS = {
    "slp": (SlpParams, slp_aggregate),
    "mlp": (MlpParams, mlp_aggregate),
    "attn": (AttnParams, attention_aggregate),
}


@dataclass
class PkgimModel:
    """Two parallel channels plus the fusion module; channels share dims but
    never weights."""

    channel1: TgcnParams
    a_hat1: np.ndarray
    channel2: TgcnParams
    a_hat2: np.ndarray
    aggregator_kind: str
    aggregator: object


def pkgim_forward(window, model: PkgimModel) -> Value:
    """Run both channels on the window and fuse their final hidden states."""
    h1 = tgcn_hidden(window, model.a_hat1, model.channel1)
    h2 = tgcn_hidden(window, model.a_hat2, model.channel2)
    _, aggregate = _AGGREGATORS[model.aggregator_kind]
    return aggregate(h1, h2, model.aggregator)


class KgimRegressor(TgcnRegressor):
    """Baseline estimator over or_merge(graph, knowledge_graph).

    Construction aside, training and inference are byte-for-byte the
    baseline path: with an edgeless knowledge graph the fit trajectory is
    bit-identical to ``TgcnRegressor`` on the same graph and seed.
    """

    def __init__(self, graph: Graph = None, knowledge_graph: Graph = None,
                 hidden_dim: int = 64, conv_dim: int = 1, horizon: int = 1,
                 epochs: int = 100, batch_size: int = 32, learning_rate: float = 1e-3,
                 patience: int = 10, min_epochs: int = 0,
                 max_train_windows: int | None = None, seed: int = 0):
        super().__init__(
            graph=graph, hidden_dim=hidden_dim, conv_dim=conv_dim, horizon=horizon,
            epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
            patience=patience, min_epochs=min_epochs,
            max_train_windows=max_train_windows, seed=seed,
        )
        self.knowledge_graph = knowledge_graph

    def _resolve_graph(self) -> Graph:
        if self.graph is None or self.knowledge_graph is None:
            raise ValueError("graph and knowledge_graph must be set before fitting")
        self.merged_graph_ = or_merge(self.graph, self.knowledge_graph)
        return self.merged_graph_

    def set_inference_graph(self, graph: Graph) -> None:
        super().set_inference_graph(or_merge(graph, self.knowledge_graph))


class PkgimRegressor(_RecurrentEstimator):
    """Parallel two-channel estimator fused by a learned aggregator.

    ``aggregator`` is one of ``slp`` / ``mlp`` / ``attn``. The SLP fusion
    ends in a ReLU, so its targets are trained in the shifted space
    (x+1)/2 and predictions are mapped back, keeping negative angles
    representable.
    """

    def __init__(self, graph: Graph = None, knowledge_graph: Graph = None,
                 aggregator: str = "slp", hidden_dim: int = 64, conv_dim: int = 1,
                 horizon: int = 1, epochs: int = 100, batch_size: int = 32,
                 learning_rate: float = 1e-3, patience: int = 10, min_epochs: int = 0,
                 max_train_windows: int | None = None, seed: int = 0):
        self.graph = graph
        self.knowledge_graph = knowledge_graph
        self.aggregator = aggregator
        self.hidden_dim = hidden_dim
        self.conv_dim = conv_dim
        self.horizon = horizon
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.min_epochs = min_epochs
        self.max_train_windows = max_train_windows
        self.seed = seed

    def _setup(self, n_nodes: int, rng) -> None:
        if self.graph is None or self.knowledge_graph is None:
            raise ValueError("graph and knowledge_graph must be set before fitting")
        if self.graph.num_nodes != self.knowledge_graph.num_nodes:
            raise ValueError(
                f"node counts differ: {self.graph.num_nodes} vs "
                f"{self.knowledge_graph.num_nodes}"
            )
        if self.graph.num_nodes != n_nodes:
            raise ValueError(
                f"graph has {self.graph.num_nodes} nodes but windows have {n_nodes}"
            )
        if self.aggregator not in _AGGREGATORS:
            raise ValueError(
                f"unknown aggregator {self.aggregator!r}; choose from {sorted(_AGGREGATORS)}"
            )
        param_cls, _ = _AGGREGATORS[self.aggregator]
        ch1 = TgcnParams.init(rng, 1, self.hidden_dim, self.conv_dim)
        ch2 = TgcnParams.init(rng, 1, self.hidden_dim, self.conv_dim)
        agg = param_cls.init(rng, self.hidden_dim, self.horizon)
        self.model_ = PkgimModel(
            channel1=ch1,
            a_hat1=normalized_adjacency(self.graph),
            channel2=ch2,
            a_hat2=normalized_adjacency(self.knowledge_graph),
            aggregator_kind=self.aggregator,
            aggregator=agg,
        )
        self._params = ch1.params() + ch2.params() + agg.params()

    def _predict_window(self, window) -> Value:
        return pkgim_forward(window, self.model_)

    def _predict_stacked(self, windows):
        if self.conv_dim != 1:
            return None
        h1 = batched_hidden(windows, self.model_.a_hat1, self.model_.channel1)
        h2 = batched_hidden(windows, self.model_.a_hat2, self.model_.channel2)
        _, aggregate = _AGGREGATORS[self.aggregator]
        return aggregate(h1, h2, self.model_.aggregator)

    def _post_setup_probe(self, windows) -> None:
        """ReLU columns in the fusion head that are inactive on every probe
        sample would never receive gradient; negating such a column keeps
        the init distribution (it is sign-symmetric) and revives it."""
        if self.aggregator == "attn":
            return
        with ad.no_grad():
            if self.conv_dim == 1:
                h1 = batched_hidden(windows, self.model_.a_hat1, self.model_.channel1).data
                h2 = batched_hidden(windows, self.model_.a_hat2, self.model_.channel2).data
            else:
                h1 = np.concatenate(
                    [tgcn_hidden(w, self.model_.a_hat1, self.model_.channel1).data for w in windows]
                )
                h2 = np.concatenate(
                    [tgcn_hidden(w, self.model_.a_hat2, self.model_.channel2).data for w in windows]
                )
        agg = self.model_.aggregator
        if self.aggregator == "slp":
            cat = np.concatenate([h1 @ agg.W1.data, h2 @ agg.W2.data], axis=1)
            pre = cat @ agg.W3.data
            agg.W3.data[:, (pre <= 0).all(axis=0)] *= -1.0
        else:
            cat = np.concatenate([h1, h2], axis=1)
            pre = cat @ agg.W1.data
            agg.W1.data[:, (pre <= 0).all(axis=0)] *= -1.0

    def _target_transform(self, y: np.ndarray) -> np.ndarray:
        if self.aggregator == "slp":
            return (y + 1.0) / 2.0
        return y

    def _output_transform(self, pred: np.ndarray) -> np.ndarray:
        if self.aggregator == "slp":
            return 2.0 * pred - 1.0
        return pred

    def fit(self, X, y, validation=None):
        return self._fit_impl(X, y, validation)

    def set_inference_graph(self, graph: Graph) -> None:
        """Swap channel 1's topology on a fitted model; the knowledge channel
        keeps its graph."""
        check_is_fitted(self, "_params")
        self.model_.a_hat1 = normalized_adjacency(graph)

    def named_params(self) -> dict:
        check_is_fitted(self, "_params")
        out = self.model_.channel1.named("ch1.")
        out.update(self.model_.channel2.named("ch2."))
        out.update(self.model_.aggregator.named("agg."))
        return out


VARIANTS = ("baseline", "kgim", "pkgim-slp", "pkgim-mlp", "pkgim-attn")


def make_model(variant: str, graph: Graph, knowledge_graph: Graph | None = None,
               **kwargs):
    """Instantiate a model by its CLI selector string."""
    if variant == "baseline":
        return TgcnRegressor(graph=graph, **kwargs)
    if variant == "kgim":
        return KgimRegressor(graph=graph, knowledge_graph=knowledge_graph, **kwargs)
    if variant.startswith("pkgim-"):
        agg = variant.split("-", 1)[1]
        if agg in _AGGREGATORS:
            return PkgimRegressor(
                graph=graph, knowledge_graph=knowledge_graph, aggregator=agg, **kwargs
            )
    raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")

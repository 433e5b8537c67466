"""The baseline temporal graph-convolutional state estimator.

Per time step the model applies a two-layer graph convolution
sigma(A_hat relu(A_hat X W0) W1) and feeds the result through a GRU cell;
the final hidden state maps through a learned linear head to the
prediction. Training minimizes mean-squared one-step-ahead error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._base import (
    BaseEstimator,
    check_is_fitted,
    check_matching_targets,
    check_windows,
)
from .autodiff import DivergenceError, Value
from .graphs import Graph, normalized_adjacency

__all__ = [
    "TgcnParams",
    "ReadoutParams",
    "graph_conv",
    "gru_step",
    "tgcn_hidden",
    "forward",
    "rmse",
    "TgcnRegressor",
]


def init_uniform(rng, rows: int, cols: int, fan_in: int | None = None) -> Value:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in if fan_in is not None else rows)
    return ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))


@dataclass
class TgcnParams:
    """Graph-convolution weights plus GRU gate weights/biases."""

    W0: Value
    W1: Value
    Wu: Value
    Wr: Value
    Wz: Value
    bu: Value
    br: Value
    bz: Value
    hidden_dim: int
    conv_dim: int

    @classmethod
    def init(cls, rng, feature_dim: int, hidden_dim: int, conv_dim: int) -> "TgcnParams":
        gate_in = conv_dim + hidden_dim
        return cls(
            W0=init_uniform(rng, feature_dim, hidden_dim, fan_in=feature_dim),
            W1=init_uniform(rng, hidden_dim, conv_dim, fan_in=hidden_dim),
            Wu=init_uniform(rng, gate_in, hidden_dim, fan_in=gate_in),
            Wr=init_uniform(rng, gate_in, hidden_dim, fan_in=gate_in),
            Wz=init_uniform(rng, gate_in, hidden_dim, fan_in=gate_in),
            bu=ad.parameter(np.zeros((1, hidden_dim))),
            br=ad.parameter(np.zeros((1, hidden_dim))),
            bz=ad.parameter(np.zeros((1, hidden_dim))),
            hidden_dim=hidden_dim,
            conv_dim=conv_dim,
        )

    def params(self):
        return [self.W0, self.W1, self.Wu, self.Wr, self.Wz, self.bu, self.br, self.bz]

    def named(self, prefix: str = ""):
        names = ["W0", "W1", "Wu", "Wr", "Wz", "bu", "br", "bz"]
        return {prefix + n: p for n, p in zip(names, self.params())}


@dataclass
class ReadoutParams:
    """Linear head from the final hidden state to the prediction columns."""

    W: Value
    b: Value

    @classmethod
    def init(cls, rng, hidden_dim: int, horizon: int) -> "ReadoutParams":
        return cls(
            W=init_uniform(rng, hidden_dim, horizon, fan_in=hidden_dim),
            b=ad.parameter(np.zeros((1, horizon))),
        )

    def params(self):
        return [self.W, self.b]

    def named(self, prefix: str = ""):
        return {prefix + "Wout": self.W, prefix + "bout": self.b}


def graph_conv(x, a_hat, params: TgcnParams) -> Value:
    """Two-layer graph convolution: sigma(A_hat relu(A_hat X W0) W1)."""
    x = ad.constant(x)
    a_hat = ad.constant(a_hat)
    inner = ad.relu(ad.matmul(ad.matmul(a_hat, x), params.W0))
    return ad.sigmoid(ad.matmul(a_hat, ad.matmul(inner, params.W1)))


def gru_step(f_t: Value, h: Value, params: TgcnParams) -> Value:
    """One GRU update: gates from [F_t, h], candidate from [F_t, r*h]."""
    f_t = ad.constant(f_t)
    h = ad.constant(h)
    fh = ad.concat_cols(f_t, h)
    u = ad.sigmoid(ad.add_bias(ad.matmul(fh, params.Wu), params.bu))
    r = ad.sigmoid(ad.add_bias(ad.matmul(fh, params.Wr), params.br))
    fz = ad.concat_cols(f_t, ad.hadamard(r, h))
    z = ad.tanh_act(ad.add_bias(ad.matmul(fz, params.Wz), params.bz))
    ones = ad.constant(np.ones(u.shape))
    return ad.add(ad.hadamard(u, h), ad.hadamard(ad.sub(ones, u), z))


def tgcn_hidden(window, a_hat, params: TgcnParams) -> Value:
    """Run conv+GRU over an (N, L) window from a zero hidden state; returns
    the final N x hidden_dim state."""
    window = np.asarray(window, dtype=np.float64)
    n, length = window.shape
    a_hat = ad.constant(a_hat)
    h = ad.constant(np.zeros((n, params.hidden_dim)))
    for t in range(length):
        x_t = ad.constant(window[:, t:t + 1])
        f_t = graph_conv(x_t, a_hat, params)
        h = gru_step(f_t, h, params)
    return h


def forward(window, a_hat, params: TgcnParams, readout: ReadoutParams) -> Value:
    """Full prediction: hidden state through the linear head, N x horizon."""
    h = tgcn_hidden(window, a_hat, params)
    return ad.add_bias(ad.matmul(h, readout.W), readout.b)


def batched_hidden(windows, a_hat, params: TgcnParams) -> Value:
    """Hidden states for a whole (B, N, L) batch in one tape.

    Samples stack along the node axis (rows b*N..b*N+N-1 belong to window
    b), so every GRU step costs a fixed number of matrix ops regardless of
    batch size. Only conv_dim == 1 admits this layout.
    """
    if params.conv_dim != 1:
        raise ValueError("batched path requires conv_dim == 1")
    windows = np.asarray(windows, dtype=np.float64)
    nb, n, length = windows.shape
    a_hat = ad.constant(a_hat)
    h = ad.constant(np.zeros((nb * n, params.hidden_dim)))
    ones = ad.constant(np.ones((nb * n, params.hidden_dim)))
    for t in range(length):
        x_wide = ad.constant(windows[:, :, t].T)  # (N, B)
        mixed = ad.stack_cols(ad.matmul(a_hat, x_wide))
        inner = ad.relu(ad.matmul(mixed, params.W0))
        narrow = ad.unstack_cols(ad.matmul(inner, params.W1), n)
        f = ad.stack_cols(ad.sigmoid(ad.matmul(a_hat, narrow)))
        fh = ad.concat_cols(f, h)
        u = ad.sigmoid(ad.add_bias(ad.matmul(fh, params.Wu), params.bu))
        r = ad.sigmoid(ad.add_bias(ad.matmul(fh, params.Wr), params.br))
        fz = ad.concat_cols(f, ad.hadamard(r, h))
        z = ad.tanh_act(ad.add_bias(ad.matmul(fz, params.Wz), params.bz))
        h = ad.add(ad.hadamard(u, h), ad.hadamard(ad.sub(ones, u), z))
    return h


def rmse(predictions, targets) -> float:
    """Root mean squared error over all entries."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


class _RecurrentEstimator(BaseEstimator):
    """Shared mini-batch Adam training loop with optional early stopping.

    Subclasses provide ``_setup`` (build parameters and cached adjacencies
    from a seeded rng) and ``_predict_window`` (tape-building forward pass in
    model space). Targets may live in a transformed model space, see
    ``_target_transform`` / ``_output_transform``.
    """

    def _target_transform(self, y: np.ndarray) -> np.ndarray:
        return y

    def _output_transform(self, pred: np.ndarray) -> np.ndarray:
        return pred

    def _predict_stacked(self, windows):
        """Batched forward for a (B, N, L) block, stacked (B*N, horizon);
        None when the configuration only supports the per-window path."""
        return None

    def _post_setup_probe(self, windows) -> None:
        """Hook run once on a small training block after parameter init."""

    def _batch_loss(self, xb, yb):
        stacked = self._predict_stacked(xb)
        if stacked is not None:
            err = ad.sub(stacked, ad.constant(yb.reshape(-1, yb.shape[2])))
            return ad.mean_all(ad.hadamard(err, err))
        total = None
        for w in range(xb.shape[0]):
            pred = self._predict_window(xb[w])
            err = ad.sub(pred, ad.constant(yb[w]))
            sq = ad.sum_all(ad.hadamard(err, err))
            total = sq if total is None else ad.add(total, sq)
        return ad.scale(total, 1.0 / yb.size)

    def _fit_impl(self, X, y, validation):
        X = check_windows(X)
        y = check_matching_targets(X, y, self.horizon)
        rng = np.random.default_rng(self.seed)
        self._setup(X.shape[1], rng)
        y_model = self._target_transform(y)
        n = X.shape[0]
        if n == 0:
            raise ValueError("training split is empty")
        if self.max_train_windows is not None and n > self.max_train_windows:
            keep = np.unique(np.linspace(0, n - 1, self.max_train_windows).round().astype(int))
            X, y_model = X[keep], y_model[keep]
            n = X.shape[0]
        self._post_setup_probe(X[: min(n, 32)])
        state = ad.AdamState.for_params(self._params, learning_rate=self.learning_rate)
        train_hist, val_hist = [], []
        best = None  # (val_rmse, epoch, param snapshots)
        stale = 0
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            sq_sum = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                count = len(idx) * y_model.shape[1] * y_model.shape[2]
                loss = self._batch_loss(X[idx], y_model[idx])
                if not np.isfinite(loss.data[0, 0]):
                    raise DivergenceError(
                        f"training diverged (non-finite loss) at epoch {epoch}, "
                        f"seed {self.seed}"
                    )
                ad.backward(loss)
                ad.adam_step(self._params, state)
                sq_sum += float(loss.data[0, 0]) * count
            train_hist.append(sq_sum / (n * y_model.shape[1] * y_model.shape[2]))
            if validation is not None:
                xv, yv = validation
                val_rmse = rmse(self.predict(xv), yv)
                val_hist.append(val_rmse)
                if best is None or val_rmse < best[0]:
                    best = (val_rmse, epoch, [p.data.copy() for p in self._params])
                    stale = 0
                else:
                    stale += 1
                    if stale >= self.patience and epoch + 1 >= self.min_epochs:
                        break
        if best is not None:
            for p, snap in zip(self._params, best[2]):
                p.data = snap
            self.best_epoch_ = best[1]
        self.history_ = {"train_loss": train_hist, "val_rmse": val_hist}
        self.n_epochs_ = len(train_hist)
        self.adam_steps_ = state.step_count
        return self

    def predict(self, X):
        check_is_fitted(self, "_params")
        arr = check_windows(X)
        single = np.asarray(X).ndim == 2
        nb, n = arr.shape[0], arr.shape[1]
        out = np.empty((nb, n, self.horizon))
        with ad.no_grad():
            for start in range(0, nb, 512):
                block = arr[start:start + 512]
                stacked = self._predict_stacked(block)
                if stacked is not None:
                    out[start:start + 512] = stacked.data.reshape(block.shape[0], n, -1)
                else:
                    for w in range(block.shape[0]):
                        out[start + w] = self._predict_window(block[w]).data
        out = self._output_transform(out)
        return out[0] if single else out


class TgcnRegressor(_RecurrentEstimator):
    """One-step-ahead phase-angle estimator over a fixed topology.

    Parameters
    ----------
    graph : Graph
        Topology driving message passing.
    hidden_dim : int
        GRU state width per node.
    conv_dim : int
        Output width of the graph-convolution block fed to the GRU.
    horizon : int
        Prediction columns per node.
    epochs, batch_size, learning_rate, patience : training loop knobs;
        early stopping triggers only when fit() receives a validation set,
        and never before min_epochs epochs have run.
    max_train_windows : optional cap on training windows (evenly subsampled).
    seed : int
        Controls initialization and batch order; fits are deterministic.
    """

    def __init__(self, graph: Graph = None, hidden_dim: int = 64, conv_dim: int = 1,
                 horizon: int = 1, epochs: int = 100, batch_size: int = 32,
                 learning_rate: float = 1e-3, patience: int = 10, min_epochs: int = 0,
                 max_train_windows: int | None = None, seed: int = 0):
        self.graph = graph
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

    def _resolve_graph(self) -> Graph:
        if self.graph is None:
            raise ValueError("graph must be set before fitting")
        return self.graph

    def _setup(self, n_nodes: int, rng) -> None:
        g = self._resolve_graph()
        if g.num_nodes != n_nodes:
            raise ValueError(f"graph has {g.num_nodes} nodes but windows have {n_nodes}")
        self._a_hat = normalized_adjacency(g)
        self.tgcn_params_ = TgcnParams.init(rng, 1, self.hidden_dim, self.conv_dim)
        self.readout_params_ = ReadoutParams.init(rng, self.hidden_dim, self.horizon)
        self._params = self.tgcn_params_.params() + self.readout_params_.params()

    def _predict_window(self, window) -> Value:
        return forward(window, self._a_hat, self.tgcn_params_, self.readout_params_)

    def _predict_stacked(self, windows):
        if self.conv_dim != 1:
            return None
        h = batched_hidden(windows, self._a_hat, self.tgcn_params_)
        return ad.add_bias(ad.matmul(h, self.readout_params_.W), self.readout_params_.b)

    def fit(self, X, y, validation=None):
        return self._fit_impl(X, y, validation)

    def set_inference_graph(self, graph: Graph) -> None:
        """Swap the message-passing topology of an already-fitted model
        (shared-training sweeps); weights are untouched."""
        check_is_fitted(self, "_params")
        self._a_hat = normalized_adjacency(graph)

    def named_params(self) -> dict:
        check_is_fitted(self, "_params")
        return {**self.tgcn_params_.named(), **self.readout_params_.named()}

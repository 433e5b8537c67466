"""Phase-angle time-series containers, CSV ingestion, and windowing into
one-step-ahead training samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .powergrid import PowerNetwork, angles_for_profile

__all__ = [
    "TimeSeriesDataset",
    "SampleSet",
    "generate_dataset",
    "load_csv_dataset",
    "save_csv_dataset",
    "window",
]


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Per-bus signal matrix (N x T), stored max-abs normalized.

    ``values * scale`` recovers the original units (radians for generated
    data); ``scale`` is 1.0 for an all-zero signal so zeros round-trip.
    """

    values: np.ndarray
    sample_rate: float
    scale: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] < 2:
            raise ValueError(f"values must be (N, T) with T >= 2, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("values contain non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def num_buses(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    def denormalized(self) -> np.ndarray:
        return self.values * self.scale

    def restrict(self, start: int, stop: int) -> "TimeSeriesDataset":
        """Dataset over a time slice, keeping the original scale."""
        return TimeSeriesDataset(
            values=self.values[:, start:stop].copy(),
            sample_rate=self.sample_rate,
            scale=self.scale,
        )


def _normalize(raw: np.ndarray):
    scale = float(np.abs(raw).max())
    if scale == 0.0:
        scale = 1.0
    return raw / scale, scale


def generate_dataset(net: PowerNetwork, profile: np.ndarray,
                     sample_rate: float = 30.0) -> TimeSeriesDataset:
    """DC phase angles for an (N, T) injection profile, max-abs normalized."""
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 2 or profile.shape[1] < 2:
        raise ValueError(f"profile must be (N, T) with T >= 2, got {profile.shape}")
    angles = angles_for_profile(net, profile)
    values, scale = _normalize(angles)
    return TimeSeriesDataset(values=values, sample_rate=sample_rate, scale=scale)


def save_csv_dataset(dataset: TimeSeriesDataset, path, timestamps=None) -> None:
    """Bus-major CSV of de-normalized values; optional `#`-prefixed timestamp row."""
    raw = dataset.denormalized()
    with open(path, "w") as fh:
        if timestamps is not None:
            fh.write("# " + ",".join("%.17g" % t for t in timestamps) + "\n")
        for row in raw:
            fh.write(",".join("%.17g" % x for x in row) + "\n")


def load_csv_dataset(path, sample_rate: float = 30.0) -> TimeSeriesDataset:
    """Read a bus-major CSV (rows = buses, columns = time steps)."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"{path}:{lineno}: ragged row, {len(cells)} cells vs {width}"
                )
            parsed = []
            for col, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric cell at column {col}: {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    raw_matrix = np.array(rows)
    if raw_matrix.shape[1] < 2:
        raise ValueError(f"{path}: T too short ({raw_matrix.shape[1]} steps, need >= 2)")
    values, scale = _normalize(raw_matrix)
    return TimeSeriesDataset(values=values, sample_rate=sample_rate, scale=scale)


@dataclass(frozen=True)
class SampleSet:
    """Windowed samples: inputs (W, N, L), targets (W, N, tau), chronological
    train/validation/test ranges, and the training-split scale used to
    de-normalize reported errors."""

    inputs: np.ndarray
    targets: np.ndarray
    train_idx: range
    val_idx: range
    test_idx: range
    scale: float
    history: int
    horizon: int

    @property
    def num_windows(self) -> int:
        return self.inputs.shape[0]

    def split(self, name: str):
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        sl = slice(idx.start, idx.stop)
        return self.inputs[sl], self.targets[sl]


def window(dataset: TimeSeriesDataset, history: int, horizon: int = 1,
           split=(0.8, 0.1, 0.1)) -> SampleSet:
    """Stride-1 windows with chronological splits (train earliest).

    Values are re-normalized by the max-abs over the time range the training
    windows touch, so no information from validation/test leaks into the
    scale.
    """
    if history < 1 or horizon < 1:
        raise ValueError("history and horizon must be >= 1")
    if abs(sum(split) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {split}")
    total = dataset.num_steps - history - horizon + 1
    if total < 1:
        raise ValueError(
            f"T too short: {dataset.num_steps} steps cannot fit one "
            f"{history}+{horizon} window"
        )
    n_train = int(total * split[0])
    n_val = int(total * split[1])
    raw = dataset.denormalized()
    train_extent = n_train + history + horizon - 1 if n_train > 0 else raw.shape[1]
    scale = float(np.abs(raw[:, :train_extent]).max())
    if scale == 0.0:
        scale = 1.0
    values = raw / scale
    n = dataset.num_buses
    inputs = np.empty((total, n, history))
    targets = np.empty((total, n, horizon))
    for w in range(total):
        inputs[w] = values[:, w:w + history]
        targets[w] = values[:, w + history:w + history + horizon]
    return SampleSet(
        inputs=inputs,
        targets=targets,
        train_idx=range(0, n_train),
        val_idx=range(n_train, n_train + n_val),
        test_idx=range(n_train + n_val, total),
        scale=scale,
        history=history,
        horizon=horizon,
    )

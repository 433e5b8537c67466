"""Minimal scikit-learn-compatible estimator plumbing: parameter
introspection via __init__ signatures plus the input checks shared by the
model classes."""

from __future__ import annotations

import inspect

import numpy as np


class NotFittedError(RuntimeError):
    pass


class BaseEstimator:
    """get_params/set_params over the constructor signature, scikit-learn
    convention: every __init__ argument is stored verbatim as an attribute."""

    @classmethod
    def _get_param_names(cls):
        sig = inspect.signature(cls.__init__)
        return sorted(
            name for name, p in sig.parameters.items()
            if name != "self" and p.kind != p.VAR_KEYWORD
        )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._get_param_names()}

    def set_params(self, **params):
        valid = set(self._get_param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def check_is_fitted(estimator, attr: str) -> None:
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


def check_windows(X, name: str = "X") -> np.ndarray:
    """Validate a batch of (N, L) windows; a single 2-D window is promoted to
    a batch of one. Returns a float64 (n, N, L) array."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (n_windows, n_nodes, length), got {arr.shape}")
    if arr.shape[2] < 1:
        raise ValueError(f"{name} windows must span at least one time step")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_matching_targets(X: np.ndarray, y, horizon: int) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    expected = (X.shape[0], X.shape[1], horizon)
    if arr.shape != expected:
        raise ValueError(f"targets must have shape {expected}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("targets contain non-finite entries")
    return arr

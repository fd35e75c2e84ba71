"""Input validation helpers shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array, check_consistent_length

from .exceptions import DataError


def check_descriptors(X, n_features=None) -> np.ndarray:
    """2-D finite float array of descriptors, optionally of a fixed width."""
    try:
        X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_fixes(Z) -> np.ndarray:
    """``(N, 3)`` array of x, y, bearing; an ``(N, 2)`` array gets zero bearings."""
    try:
        Z = check_array(Z, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if Z.shape[1] == 2:
        Z = np.hstack([Z, np.zeros((len(Z), 1))])
    if Z.shape[1] != 3:
        raise DataError(f"fixes must have 2 or 3 columns (x, y[, bearing]), got {Z.shape[1]}")
    return Z


def check_groups(groups, n: int) -> np.ndarray:
    """Session labels; consecutive runs of equal labels form one session."""
    if groups is None:
        return np.zeros(n, dtype=np.int64)
    g = np.asarray(groups).reshape(-1)
    try:
        check_consistent_length(g, np.empty(n))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return g


def check_training_inputs(X, Z, groups=None):
    X = check_descriptors(X)
    Z = check_fixes(Z)
    try:
        check_consistent_length(X, Z)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return X, Z, check_groups(groups, len(X))

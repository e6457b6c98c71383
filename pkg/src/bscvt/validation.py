"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array

from .geometry import BoundingBox
from .maps import DiagramMap, get_map


def check_map(dmap) -> DiagramMap:
    try:
        return get_map(dmap)
    except (TypeError, ValueError) as exc:
        raise ValueError(str(exc)) from None


def check_box(box, dmap: DiagramMap = None):
    """``None``/``"auto"`` pass through; tuples and ``"a,b,c,d"`` strings become boxes."""
    if box is None or (isinstance(box, str) and box.strip().lower() == "auto"):
        return None
    if isinstance(box, BoundingBox):
        return box
    if isinstance(box, str):
        return BoundingBox.parse(box)
    vals = np.asarray(box, dtype=float).ravel()
    if vals.shape != (4,):
        raise ValueError("box needs 4 numbers: xmin, xmax, ymin, ymax")
    return BoundingBox(*map(float, vals))


def check_samples(X, dmap: DiagramMap, *, in_domain: bool = True) -> np.ndarray:
    """2-D float array with ``dmap.n_params`` columns, optionally inside the parameter box."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != dmap.n_params:
        raise ValueError(f"expected {dmap.n_params} parameters per sample, got {X.shape[1]}")
    if in_domain and not np.all(dmap.domain.contains(X, tol=1e-12)):
        raise ValueError("samples outside the parameter box")
    return X


def check_images(Y) -> np.ndarray:
    Y = check_array(Y, dtype=np.float64, ensure_2d=True)
    if Y.shape[1] != 2:
        raise ValueError(f"images must have 2 columns, got {Y.shape[1]}")
    return Y


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_seed(random_state) -> int:
    """Integer seed for the deterministic pipeline (``None`` means 0)."""
    if random_state is None:
        return 0
    if isinstance(random_state, numbers.Integral) and not isinstance(random_state, bool) and random_state >= 0:
        return int(random_state)
    raise ValueError("random_state must be None or a non-negative integer")

"""Small plain-numpy helpers shared by the non-differentiable paths."""
from __future__ import annotations

import numpy as np


def row_softmax(arr: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array (max-subtracted, float64)."""
    a = np.asarray(arr, dtype=np.float64)
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)

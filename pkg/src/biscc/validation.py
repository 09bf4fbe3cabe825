"""Input validation helpers for the estimator-facing API."""
from __future__ import annotations

import numpy as np


def check_feature_array(X) -> np.ndarray:
    """Validate a (n_videos, T, F) feature stack; returns float64."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected an (n_videos, T, F) array, got ndim={arr.ndim}")
    n, t_len, f_dim = arr.shape
    if n < 1 or t_len < 1 or f_dim < 1:
        raise ValueError(f"empty feature array with shape {arr.shape}")
    if f_dim % 2 != 0:
        raise ValueError("feature dimension must be even (rgb/flow halves)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features contain non-finite values")
    return arr


def check_label_matrix(y, n_videos: int) -> np.ndarray:
    """Validate an (n_videos, C) binary label matrix with at least one
    positive class per video."""
    arr = np.asarray(y)
    if arr.ndim != 2:
        raise ValueError(f"expected an (n_videos, n_classes) matrix, got ndim={arr.ndim}")
    if arr.shape[0] != n_videos:
        raise ValueError(f"label rows ({arr.shape[0]}) != videos ({n_videos})")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("labels must be binary")
    if (arr.sum(axis=1) < 1).any():
        raise ValueError("every video needs at least one positive class")
    return arr.astype(np.uint8)


def check_segment_lists(segments, n_videos: int, n_classes: int, t_len: int) -> list:
    """Validate per-video (class, start, end) ground-truth segment lists."""
    if len(segments) != n_videos:
        raise ValueError(f"segment lists ({len(segments)}) != videos ({n_videos})")
    out = []
    for i, segs in enumerate(segments):
        clean = []
        for cls, s, e in segs:
            if not (0 <= s < e <= t_len):
                raise ValueError(f"video {i}: segment ({s},{e}) outside [0,{t_len}]")
            if not (0 <= cls < n_classes):
                raise ValueError(f"video {i}: class {cls} out of range")
            clean.append((int(cls), int(s), int(e)))
        out.append(clean)
    return out

"""Training objectives: top-k MIL classification on both T-CAM heads,
attention sparsity/guide regularizers, co-activity ranking, and the
(bidirectional) semantic consistency constraints.

All losses accept a stacked batch of equal-length videos (rows grouped
in blocks of ``block_len``); per-batch values are means over videos, so
the single-video case is the plain definition.  Teacher-side inputs are
always plain arrays or detached tensors; the KL routes gradient only to
the prediction side, so teacher tensors never receive gradient from any
consistency term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor2

CAS_MARGIN = 0.5
_COS_EPS = 1e-12


@dataclass
class LossBreakdown:
    """Per-step scalars; cls/norm/guide/cas are summed over branches and
    total = cls + norm + guide + cas + alpha * bi_scc."""

    cls: float = 0.0
    norm: float = 0.0
    guide: float = 0.0
    cas: float = 0.0
    bi_scc: float = 0.0
    total: float = 0.0


def topk_for(t_len: int, divisor: int = 8) -> int:
    """Pooling size rule: max(1, floor(T / divisor))."""
    return max(1, t_len // divisor)


def video_class_probs(scores, k: int, block_len: int | None = None) -> Tensor2:
    """Video-level class distribution per block: softmax over classes of
    the per-class top-k temporal mean."""
    return ad.softmax_rows(ad.topk_mean_time(scores, k, block_len))


def _extended_labels(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Label matrix with the background column appended (1 for the raw
    head, 0 for the suppressed head), rows L1-normalized."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if (y.sum(axis=1) <= 0).any():
        raise ValueError("every video label needs at least one positive class")
    ones = np.ones((y.shape[0], 1))
    zeros = np.zeros((y.shape[0], 1))
    with_bg = np.concatenate([y, ones], axis=1)
    no_bg = np.concatenate([y, zeros], axis=1)
    return (with_bg / with_bg.sum(axis=1, keepdims=True),
            no_bg / no_bg.sum(axis=1, keepdims=True))


def mil_loss(s, s_bar, y: np.ndarray, k: int, block_len: int | None = None) -> Tensor2:
    """Top-k multiple-instance cross-entropy on both heads, mean over
    the batch.

    The label vector gains a background entry (1 for the raw T-CAM head,
    0 for the suppressed head) and is L1-normalized before the dot
    product so multi-action videos do not dominate.
    """
    y_full, y_supp = _extended_labels(y)
    n_videos = y_full.shape[0]
    p = video_class_probs(s, k, block_len)
    p_supp = video_class_probs(s_bar, k, block_len)
    term1 = ad.total(ad.mul(Tensor2(y_full), ad.log(p)))
    term2 = ad.total(ad.mul(Tensor2(y_supp), ad.log(p_supp)))
    return ad.scale(ad.add(term1, term2), -1.0 / n_videos)


def mil_entropy_floor(y: np.ndarray) -> float:
    """Cross-entropy minimum of mil_loss for a given label matrix."""
    out = 0.0
    y = np.atleast_2d(y)
    for mat in _extended_labels(y):
        nz = mat[mat > 0]
        out += float(-(nz * np.log(nz)).sum())
    return out / y.shape[0]


def norm_loss(a) -> Tensor2:
    """Mean absolute attention: sparsity pressure on A."""
    return ad.mean(ad.absolute(a))


def guide_loss(a, s) -> Tensor2:
    """Mean |A - (1 - p_bg)|: attention must complement the background
    probability of the raw T-CAM."""
    s = s if isinstance(s, Tensor2) else Tensor2(s)
    p_bg = ad.slice_col(ad.softmax_rows(s), s.cols - 1)
    target = ad.add_const(ad.neg(p_bg), 1.0)
    return ad.mean(ad.absolute(ad.sub(a, target)))


def _pair_indices(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(video, class) item table and the index pairs of items that share
    a class across two different videos."""
    labels = np.atleast_2d(np.asarray(labels))
    block_ids, col_ids = np.nonzero(labels)
    item_of = {(b, c): m for m, (b, c) in enumerate(zip(block_ids, col_ids))}
    left, right = [], []
    n = labels.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            for c in np.flatnonzero(labels[i] & labels[j]):
                left.append(item_of[(i, c)])
                right.append(item_of[(j, c)])
    return (block_ids, col_ids, np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64))


def _cosine_distance_rows(fa, na, fb, nb, idx_a, idx_b) -> Tensor2:
    dots = ad.sum_rows(ad.mul(ad.gather_rows(fa, idx_a), ad.gather_rows(fb, idx_b)))
    denom = ad.add_const(ad.mul(ad.gather_rows(na, idx_a), ad.gather_rows(nb, idx_b)),
                         _COS_EPS)
    return ad.add_const(ad.neg(ad.div(dots, denom)), 1.0)


def cas_loss(s_bar, features, labels: np.ndarray, block_len: int | None = None,
             margin: float = CAS_MARGIN) -> Tensor2:
    """Co-activity ranking over same-class video pairs.

    For each pair of videos sharing a class, features pooled under the
    class column's temporal softmax (high attention) must be closer to
    each other, by cosine distance, than to the partner's pooling under
    the renormalized complement weights (low attention), with a margin.
    Returns a constant zero when no pair shares a class.
    """
    s_bar_t = s_bar if isinstance(s_bar, Tensor2) else Tensor2(s_bar)
    x = features if isinstance(features, Tensor2) else Tensor2(features)
    t_len = block_len if block_len is not None else s_bar_t.rows
    if t_len < 2:
        return Tensor2(0.0)
    block_ids, col_ids, left, right = _pair_indices(labels)
    if len(left) == 0:
        return Tensor2(0.0)
    cols = ad.gather_block_columns(s_bar_t, block_ids, col_ids, t_len)
    w_high = ad.softmax_rows(cols)
    w_low = ad.scale(ad.add_const(ad.neg(w_high), 1.0), 1.0 / (t_len - 1))
    f_high = ad.rows_matmul_blocks(w_high, x, block_ids, t_len)
    f_low = ad.rows_matmul_blocks(w_low, x, block_ids, t_len)
    n_high = ad.sqrt(ad.sum_rows(ad.mul(f_high, f_high)))
    n_low = ad.sqrt(ad.sum_rows(ad.mul(f_low, f_low)))
    d_hh = _cosine_distance_rows(f_high, n_high, f_high, n_high, left, right)
    d_hl = _cosine_distance_rows(f_high, n_high, f_low, n_low, left, right)
    d_lh = _cosine_distance_rows(f_low, n_low, f_high, n_high, left, right)
    h1 = ad.relu(ad.add_const(ad.sub(d_hh, d_hl), margin))
    h2 = ad.relu(ad.add_const(ad.sub(d_hh, d_lh), margin))
    return ad.scale(ad.mean(ad.add(h1, h2)), 0.5)


def scc_loss(teacher_s_bar, student_s_bar) -> Tensor2:
    """Semantic consistency: KL between per-segment class distributions,
    teacher as the detached target."""
    teacher = teacher_s_bar if isinstance(teacher_s_bar, Tensor2) else Tensor2(teacher_s_bar)
    teacher = teacher.detach() if teacher.requires_grad else teacher
    student = student_s_bar
    if teacher.shape != student.shape:
        raise ValueError(f"shape mismatch: {teacher.shape} vs {student.shape}")
    return ad.kl_rows(ad.softmax_rows(teacher), ad.softmax_rows(student))


def bi_scc_loss(ct_original, student_aug_s_bar, ct_augmented, student_ori_s_bar) -> Tensor2:
    """Cross supervision: each branch's comprehensive teacher T-CAM
    constrains the other branch's student, both KL terms weighted equally."""
    return ad.add(scc_loss(ct_original, student_aug_s_bar),
                  scc_loss(ct_augmented, student_ori_s_bar))


def total_loss(branch_terms: list, bi_scc, alpha: float) -> tuple[Tensor2, LossBreakdown]:
    """Combine per-branch loss dicts and the consistency term.

    ``branch_terms`` is a list of dicts with keys cls/norm/guide/cas
    mapping to scalar tensors; ``bi_scc`` is a scalar tensor or None.
    Returns the differentiable total and the float breakdown.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    parts = []
    bd = LossBreakdown()
    for terms in branch_terms:
        for key in ("cls", "norm", "guide", "cas"):
            t = terms.get(key)
            if t is None:
                continue
            parts.append(t)
            setattr(bd, key, getattr(bd, key) + t.item())
    acc = parts[0]
    for t in parts[1:]:
        acc = ad.add(acc, t)
    if bi_scc is not None:
        bd.bi_scc = bi_scc.item()
        if alpha > 0:
            acc = ad.add(acc, ad.scale(bi_scc, alpha))
    bd.total = bd.cls + bd.norm + bd.guide + bd.cas + alpha * bd.bi_scc
    return acc, bd

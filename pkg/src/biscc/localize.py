"""Test-time proposal generation, outer-inner confidence scoring, NMS,
and mAP evaluation over temporal IoU thresholds."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import collect_instance_mask, mask_to_instances
from .losses import topk_for
from .network import ModelParams, tcam_forward_np, tcam_forward_stack
from .numeric import row_softmax

DEFAULT_PROPOSAL_THRESHOLDS = tuple(np.round(np.arange(0.10, 0.901, 0.05), 2))
DEFAULT_EVAL_IOUS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class Proposal:
    """One localized action: class, half-open segment interval, confidence."""

    class_id: int
    start: int
    end: int
    conf: float

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid interval [{self.start}, {self.end})")
        if not np.isfinite(self.conf):
            raise ValueError("confidence must be finite")


@dataclass(frozen=True)
class LocalizeConfig:
    class_threshold: float = 0.2
    nms_iou: float = 0.45
    proposal_thresholds: tuple = DEFAULT_PROPOSAL_THRESHOLDS
    topk_divisor: int = 8
    outer_only: bool = False


def select_classes(video_probs: np.ndarray, class_threshold: float) -> list:
    """Action classes whose video-level probability clears the threshold
    (the trailing background entry never qualifies)."""
    if not (0.0 <= class_threshold < 1.0):
        raise ValueError("class threshold must be in [0, 1)")
    probs = np.asarray(video_probs, dtype=np.float64)
    return [c for c in range(len(probs) - 1) if probs[c] > class_threshold]


def outer_inner_score(col: np.ndarray, start: int, end: int, video_prob: float,
                      outer_only: bool = False) -> float:
    """Contrast of the inner interval mean against the inflated-window
    mean on a softmax-normalized class column, plus 0.2 x video prob.

    The inflation is a quarter of the proposal length per side (floor 1
    segment, round half up) and is clamped to the video bounds.  By
    default the outer window contains the inner interval; ``outer_only``
    restricts it to the flanks.
    """
    col = np.asarray(col, dtype=np.float64).reshape(-1)
    t_len = len(col)
    if not (0 <= start < end <= t_len):
        raise ValueError(f"invalid interval [{start}, {end}) for T={t_len}")
    pad = max(1, int(np.floor(0.25 * (end - start) + 0.5)))
    lo, hi = max(0, start - pad), min(t_len, end + pad)
    inner = float(col[start:end].mean())
    if outer_only:
        flank = np.concatenate([col[lo:start], col[end:hi]])
        outer = float(flank.mean()) if len(flank) else inner
    else:
        outer = float(col[lo:hi].mean())
    return inner - outer + 0.2 * float(video_prob)


def generate_proposals(attention: np.ndarray, s_bar: np.ndarray, classes,
                       thresholds, video_probs: np.ndarray,
                       outer_only: bool = False) -> list:
    """Threshold the attention at every level, turn maximal surviving
    runs into one proposal per selected class, score, and deduplicate."""
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("threshold set must be non-empty")
    att = np.asarray(attention, dtype=np.float64).reshape(-1)
    probs = row_softmax(np.asarray(s_bar, dtype=np.float64))
    best: dict[tuple, float] = {}
    for theta in thresholds:
        keep = att > theta
        for s, e in mask_to_instances(keep.astype(np.uint8)):
            for c in classes:
                conf = outer_inner_score(probs[:, c], s, e, video_probs[c],
                                         outer_only=outer_only)
                key = (c, s, e)
                if key not in best or conf > best[key]:
                    best[key] = conf
    return [Proposal(class_id=c, start=s, end=e, conf=conf)
            for (c, s, e), conf in sorted(best.items())]


def temporal_iou(a: tuple, b: tuple) -> float:
    """Intersection over union of two half-open segment intervals."""
    (s1, e1), (s2, e2) = a, b
    if s1 >= e1 or s2 >= e2:
        raise ValueError("degenerate interval")
    inter = max(0, min(e1, e2) - max(s1, s2))
    union = (e1 - s1) + (e2 - s2) - inter
    return inter / union


def nms(proposals: list, iou_threshold: float) -> list:
    """Greedy per-class suppression: keep a proposal iff its IoU with
    every kept same-class proposal stays at or below the threshold."""
    kept: list[Proposal] = []
    by_class: dict[int, list] = {}
    for p in proposals:
        by_class.setdefault(p.class_id, []).append(p)
    for class_id in sorted(by_class):
        ranked = sorted(by_class[class_id], key=lambda p: (-p.conf, p.start, p.end))
        chosen: list[Proposal] = []
        for p in ranked:
            if all(temporal_iou((p.start, p.end), (q.start, q.end)) <= iou_threshold
                   for q in chosen):
                chosen.append(p)
        kept.extend(chosen)
    return kept


def _proposals_from_tcam(a: np.ndarray, s_bar: np.ndarray,
                         cfg: LocalizeConfig) -> list:
    k = topk_for(s_bar.shape[0], cfg.topk_divisor)
    pooled = np.sort(s_bar, axis=0)[::-1][:k].mean(axis=0)
    video_probs = row_softmax(pooled.reshape(1, -1))[0]
    classes = select_classes(video_probs, cfg.class_threshold)
    raw = generate_proposals(a, s_bar, classes, cfg.proposal_thresholds,
                             video_probs, outer_only=cfg.outer_only)
    return nms(raw, cfg.nms_iou)


def localize_video(params: ModelParams, features: np.ndarray,
                   cfg: LocalizeConfig = LocalizeConfig()) -> list:
    """Full proposal pipeline for one video with a trained model."""
    _, a, s_bar = tcam_forward_np(features, params)
    return _proposals_from_tcam(a, s_bar, cfg)


def evaluate_map(proposals_by_video: dict, gt_by_video: dict,
                 iou_thresholds) -> dict:
    """Detection mAP per IoU threshold plus their mean.

    Per class and threshold, proposals ranked by confidence greedily
    match the unmatched ground-truth segment of highest IoU at or above
    the threshold; AP sums precision at each recall step.  Classes with
    no ground truth are excluded from the mean.
    """
    iou_thresholds = list(iou_thresholds)
    classes = sorted({cls for segs in gt_by_video.values() for cls, _, _ in segs})
    out: dict = {}
    for thr in iou_thresholds:
        aps = [_average_precision(proposals_by_video, gt_by_video, cls, thr)
               for cls in classes]
        out[thr] = float(np.mean(aps)) if aps else 0.0
    out["avg"] = float(np.mean([out[t] for t in iou_thresholds])) if iou_thresholds else 0.0
    return out


def _average_precision(proposals_by_video: dict, gt_by_video: dict,
                       class_id: int, iou_threshold: float) -> float:
    entries = []
    for vid, props in proposals_by_video.items():
        for p in props:
            if p.class_id == class_id:
                entries.append((vid, p))
    entries.sort(key=lambda e: (-e[1].conf, e[0], e[1].start, e[1].end))
    gt_pool = {vid: [(s, e) for cls, s, e in segs if cls == class_id]
               for vid, segs in gt_by_video.items()}
    n_gt = sum(len(v) for v in gt_pool.values())
    if n_gt == 0:
        return 0.0
    matched = {vid: [False] * len(segs) for vid, segs in gt_pool.items()}
    tp = 0
    ap = 0.0
    for rank, (vid, p) in enumerate(entries, start=1):
        best_iou, best_j = 0.0, -1
        for j, seg in enumerate(gt_pool.get(vid, [])):
            if matched[vid][j]:
                continue
            iou = temporal_iou((p.start, p.end), seg)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            matched[vid][best_j] = True
            tp += 1
            ap += (1.0 / n_gt) * (tp / rank)
    return ap


def pseudo_precision(mask: np.ndarray, gt_segments) -> float:
    """Fraction of pseudo-foreground segments inside any ground-truth
    interval; an empty mask is vacuously precise (1.0)."""
    m = np.asarray(mask).astype(bool)
    if not m.any():
        return 1.0
    inside = np.zeros(len(m), dtype=bool)
    for _, s, e in gt_segments:
        inside[s:e] = True
    return float((m & inside).sum() / m.sum())


def mask_counts(mask: np.ndarray, gt_segments) -> tuple[int, int]:
    """(true-foreground hits, mask size) for micro-averaged precision."""
    m = np.asarray(mask).astype(bool)
    inside = np.zeros(len(m), dtype=bool)
    for _, s, e in gt_segments:
        inside[s:e] = True
    return int((m & inside).sum()), int(m.sum())


def co_scene_false_positive_rate(params: ModelParams, videos, gamma: float) -> float:
    """Fraction of co-scene segments the model still fires on at the
    pseudo-label threshold; NaN-free (returns 0.0 with no such segments)."""
    with_spans = [v for v in videos if v.co_scene_segments]
    if not with_spans:
        return 0.0
    sbars = tcam_forward_stack([v.features.astype(np.float64) for v in with_spans],
                               params)
    hits = 0
    total = 0
    for v, s_bar in zip(with_spans, sbars):
        mask = collect_instance_mask(s_bar, gamma)
        for _, s, e in v.co_scene_segments:
            hits += int(mask[s:e].sum())
            total += e - s
    return hits / total if total else 0.0


@dataclass
class EvaluationReport:
    map_by_iou: dict = field(default_factory=dict)
    average: float = 0.0


def evaluate_model(params: ModelParams, videos, cfg: LocalizeConfig = LocalizeConfig(),
                   iou_thresholds=DEFAULT_EVAL_IOUS) -> EvaluationReport:
    if not videos:
        return EvaluationReport(map_by_iou={t: 0.0 for t in iou_thresholds},
                                average=0.0)
    t_len = videos[0].num_segments
    feats = np.concatenate([v.features.astype(np.float64) for v in videos], axis=0)
    _, a_all, sbar_all = tcam_forward_np(feats, params, block_len=t_len)
    proposals = {}
    for i, v in enumerate(videos):
        a = a_all[i * t_len:(i + 1) * t_len]
        s_bar = sbar_all[i * t_len:(i + 1) * t_len]
        proposals[v.video_id] = _proposals_from_tcam(a, s_bar, cfg)
    gt = {v.video_id: list(v.gt_segments) for v in videos}
    result = evaluate_map(proposals, gt, iou_thresholds)
    return EvaluationReport(map_by_iou={t: result[t] for t in iou_thresholds},
                            average=result["avg"])

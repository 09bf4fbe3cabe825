"""Proposal generation, outer-inner scoring, NMS, IoU, and mAP, each
checked against independent recomputation oracles."""
import numpy as np
import pytest

from biscc.localize import (LocalizeConfig, Proposal, evaluate_map,
                            generate_proposals, nms, outer_inner_score,
                            pseudo_precision, select_classes, temporal_iou)
from biscc.numeric import row_softmax


def brute_force_map(proposals_by_video, gt_by_video, iou_thresholds):
    """Independent mAP oracle: per prefix of the ranked list, recompute
    the greedy matching from scratch and integrate precision over recall
    steps."""

    def matched_count(entries, gt_pool):
        taken = {vid: [False] * len(segs) for vid, segs in gt_pool.items()}
        tp_flags = []
        for vid, p in entries:
            best, best_j = 0.0, -1
            for j, seg in enumerate(gt_pool.get(vid, [])):
                if taken[vid][j]:
                    continue
                iou = temporal_iou((p.start, p.end), seg)
                if iou >= thr and iou > best:
                    best, best_j = iou, j
            if best_j >= 0:
                taken[vid][best_j] = True
                tp_flags.append(1)
            else:
                tp_flags.append(0)
        return tp_flags

    classes = sorted({c for segs in gt_by_video.values() for c, _, _ in segs})
    out = {}
    for thr in iou_thresholds:
        aps = []
        for cls in classes:
            entries = [(vid, p) for vid, props in proposals_by_video.items()
                       for p in props if p.class_id == cls]
            entries.sort(key=lambda e: (-e[1].conf, e[0], e[1].start, e[1].end))
            gt_pool = {vid: [(s, e) for c, s, e in segs if c == cls]
                       for vid, segs in gt_by_video.items()}
            n_gt = sum(len(v) for v in gt_pool.values())
            if n_gt == 0:
                continue
            flags = matched_count(entries, gt_pool)
            ap = 0.0
            prev_recall = 0.0
            tp = 0
            for rank, flag in enumerate(flags, start=1):
                tp += flag
                recall = tp / n_gt
                if flag:
                    ap += (recall - prev_recall) * (tp / rank)
                prev_recall = recall
            aps.append(ap)
        out[thr] = float(np.mean(aps)) if aps else 0.0
    return out


def outer_inner_oracle(col, s, e, p_hat):
    """Direct recomputation of the inner/outer window contrast."""
    col = np.asarray(col, dtype=np.float64)
    length = e - s
    pad = max(1, int(np.floor(0.25 * length + 0.5)))
    window = col[max(0, s - pad):min(len(col), e + pad)]
    return col[s:e].mean() - window.mean() + 0.2 * p_hat


class TestSelectClasses:
    def test_uniform_below_threshold(self):
        probs = np.full(6, 1.0 / 6.0)
        assert select_classes(probs, 0.2) == []

    def test_one_hot(self):
        probs = np.zeros(6)
        probs[3] = 1.0
        assert select_classes(probs, 0.7) == [3]

    def test_zero_threshold_selects_all_actions(self):
        probs = np.full(4, 0.25)
        assert select_classes(probs, 0.0) == [0, 1, 2]


class TestOuterInnerScore:
    def test_constant_column_reduces_to_prior(self):
        col = np.full(12, 0.37)
        val = outer_inner_score(col, 3, 7, video_prob=0.5)
        assert val == pytest.approx(0.1, abs=1e-12)

    def test_hand_example(self):
        col = np.full(10, 0.1)
        col[4:8] = 0.9
        val = outer_inner_score(col, 4, 8, video_prob=0.5)
        assert val == pytest.approx(0.36667, abs=1e-4)

    def test_edge_clamps_outer_window(self):
        col = np.array([0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
        val = outer_inner_score(col, 0, 2, video_prob=0.0)
        # pad = 1(floor), outer window = [0, 3)
        want = 0.9 - (0.9 + 0.9 + 0.1) / 3
        assert val == pytest.approx(want, abs=1e-12)

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            t_len = int(rng.integers(4, 40))
            col = rng.random(t_len)
            s = int(rng.integers(0, t_len - 1))
            e = int(rng.integers(s + 1, t_len + 1))
            p_hat = float(rng.random())
            assert outer_inner_score(col, s, e, p_hat) == pytest.approx(
                outer_inner_oracle(col, s, e, p_hat), abs=1e-12)

    def test_outer_only_mode(self):
        col = np.full(10, 0.1)
        col[4:8] = 0.9
        val = outer_inner_score(col, 4, 8, video_prob=0.0, outer_only=True)
        assert val == pytest.approx(0.9 - 0.1, abs=1e-12)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            outer_inner_score(np.zeros(5), 3, 3, 0.0)


class TestGenerateProposals:
    def test_attention_below_thresholds_gives_none(self):
        att = np.full(8, 0.05)
        s_bar = np.zeros((8, 3))
        probs = np.full(3, 1 / 3)
        out = generate_proposals(att, s_bar, [0, 1], [0.5], probs)
        assert out == []

    def test_run_extraction(self):
        att = np.array([0.9, 0.9, 0.1, 0.9])
        s_bar = np.zeros((4, 2))
        probs = np.array([0.8, 0.2])
        out = generate_proposals(att, s_bar, [0], [0.5], probs)
        spans = {(p.start, p.end) for p in out}
        assert spans == {(0, 2), (3, 4)}

    def test_nested_thresholds_property(self):
        rng = np.random.default_rng(1)
        att = rng.random(30)
        for lo, hi in [(0.2, 0.6), (0.3, 0.8)]:
            runs_lo = _runs(att > lo)
            runs_hi = _runs(att > hi)
            for s, e in runs_hi:
                assert any(rs <= s and e <= re for rs, re in runs_lo)

    def test_duplicates_deduplicated(self):
        att = np.array([0.9, 0.9, 0.0, 0.0])
        s_bar = np.zeros((4, 2))
        probs = np.array([0.9, 0.1])
        out = generate_proposals(att, s_bar, [0], [0.3, 0.5], probs)
        assert len(out) == 1


def _runs(keep):
    out, t = [], 0
    keep = list(keep)
    while t < len(keep):
        if keep[t]:
            s = t
            while t < len(keep) and keep[t]:
                t += 1
            out.append((s, t))
        else:
            t += 1
    return out


class TestTemporalIoU:
    def test_identical(self):
        assert temporal_iou((3, 9), (3, 9)) == 1.0

    def test_disjoint(self):
        assert temporal_iou((0, 4), (6, 9)) == 0.0

    def test_partial(self):
        assert temporal_iou((0, 10), (5, 15)) == pytest.approx(1 / 3)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            temporal_iou((5, 5), (0, 2))


class TestNms:
    def test_disjoint_all_kept(self):
        props = [Proposal(0, 0, 5, 0.9), Proposal(0, 10, 15, 0.5)]
        assert len(nms(props, 0.4)) == 2

    def test_identical_keeps_best(self):
        props = [Proposal(0, 2, 6, 0.8), Proposal(0, 2, 6, 0.9)]
        kept = nms(props, 0.4)
        assert len(kept) == 1 and kept[0].conf == 0.9

    def test_chain_example(self):
        props = [Proposal(0, 0, 10, 0.9), Proposal(0, 5, 15, 0.8),
                 Proposal(0, 12, 20, 0.7)]
        kept = nms(props, 0.3)
        spans = {(p.start, p.end) for p in kept}
        assert spans == {(0, 10), (12, 20)}

    def test_classes_do_not_suppress_each_other(self):
        props = [Proposal(0, 0, 10, 0.9), Proposal(1, 0, 10, 0.8)]
        assert len(nms(props, 0.3)) == 2

    def test_order_invariance_distinct_confidences(self):
        rng = np.random.default_rng(2)
        props = [Proposal(0, int(s), int(s) + int(l), float(c))
                 for s, l, c in zip(rng.integers(0, 30, 12),
                                    rng.integers(1, 8, 12),
                                    rng.permutation(12) + 1)]
        a = nms(props, 0.4)
        b = nms(list(reversed(props)), 0.4)
        assert {(p.start, p.end, p.conf) for p in a} == \
            {(p.start, p.end, p.conf) for p in b}


class TestEvaluateMap:
    def test_exact_match_is_one(self):
        gt = {"v": [(0, 2, 6), (1, 10, 14)]}
        props = {"v": [Proposal(0, 2, 6, 0.9), Proposal(1, 10, 14, 0.8)]}
        out = evaluate_map(props, gt, [0.3, 0.5, 0.7])
        assert out["avg"] == pytest.approx(1.0)

    def test_no_proposals_is_zero(self):
        gt = {"v": [(0, 2, 6)]}
        out = evaluate_map({"v": []}, gt, [0.5])
        assert out[0.5] == 0.0

    def test_spurious_higher_confidence_halves_ap(self):
        gt = {"v": [(0, 2, 6)]}
        props = {"v": [Proposal(0, 2, 6, 0.9), Proposal(0, 20, 24, 0.95)]}
        out = evaluate_map(props, gt, [0.5])
        assert out[0.5] == pytest.approx(0.5)

    def test_monotone_in_iou_threshold(self):
        rng = np.random.default_rng(3)
        props, gt = _random_instance(rng)
        out = evaluate_map(props, gt, [0.1, 0.3, 0.5, 0.7, 0.9])
        vals = [out[t] for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        props, gt = _random_instance(rng)
        thresholds = [0.3, 0.5, 0.7]
        got = evaluate_map(props, gt, thresholds)
        want = brute_force_map(props, gt, thresholds)
        for t in thresholds:
            assert got[t] == pytest.approx(want[t], abs=1e-12)


def _random_instance(rng, n_videos=3, max_gt=5, max_props=10, n_classes=3):
    gt = {}
    props = {}
    for v in range(n_videos):
        vid = f"v{v}"
        segs = []
        for _ in range(rng.integers(0, max_gt + 1)):
            s = int(rng.integers(0, 40))
            e = s + int(rng.integers(1, 10))
            segs.append((int(rng.integers(0, n_classes)), s, e))
        gt[vid] = segs
        plist = []
        for _ in range(rng.integers(0, max_props + 1)):
            s = int(rng.integers(0, 40))
            e = s + int(rng.integers(1, 12))
            plist.append(Proposal(int(rng.integers(0, n_classes)), s, e,
                                  float(rng.random())))
        props[vid] = plist
    return props, gt


class TestPseudoPrecision:
    def test_subset_of_gt_is_one(self):
        mask = np.zeros(10, dtype=np.uint8)
        mask[3:5] = 1
        assert pseudo_precision(mask, [(0, 2, 8)]) == 1.0

    def test_outside_gt_is_zero(self):
        mask = np.zeros(10, dtype=np.uint8)
        mask[0:2] = 1
        assert pseudo_precision(mask, [(0, 5, 9)]) == 0.0

    def test_three_quarters(self):
        mask = np.zeros(8, dtype=np.uint8)
        mask[[0, 1, 2, 7]] = 1
        assert pseudo_precision(mask, [(0, 0, 3)]) == pytest.approx(0.75)

    def test_empty_mask_vacuous(self):
        assert pseudo_precision(np.zeros(6, dtype=np.uint8), [(0, 1, 3)]) == 1.0

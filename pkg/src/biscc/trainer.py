"""Training drivers: the single-branch mean-teacher baseline, the
dual-branch consistency trainer, and the outer loop that refreshes
pseudo-labels between iterations.

Randomness is split into four independent generator streams (branch
inits, batch sampling, augmentation draws) derived from one seed, so
disabling the consistency path reproduces the baseline trajectory
bit-exactly under a shared seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .augment import collect_instance_mask, ctg, inter_tca, teacher_variants
from .autodiff import Tape, Tensor2
from .data import Dataset, resample_time
from .localize import (LocalizeConfig, co_scene_false_positive_rate,
                       evaluate_model, mask_counts)
from .losses import LossBreakdown
from .network import (ModelParams, init_params, tcam_forward, tcam_forward_np,
                      tcam_forward_stack)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.25
    gamma: float = 0.6
    ctg_k: int = 3
    inflate_delta: int = 1
    topk_divisor: int = 8
    lr: float = 5e-4
    weight_decay: float = 1e-3
    ema_momentum: float = 0.999
    batch_size: int = 10
    steps_per_iteration: int = 1500
    iterations: int = 3
    ctg_mode: str = "max"
    seed: int = 0
    hidden_dim: int | None = None
    use_norm_loss: bool = True
    use_guide_loss: bool = True
    use_cas_loss: bool = True
    use_inter_tca: bool = True
    use_intra_tca: bool = True
    teacher_augmentation: str = "intra_tca"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0.0 <= self.ema_momentum <= 1.0):
            raise ValueError("ema_momentum must be in [0, 1]")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.ctg_mode not in ("max", "avg"):
            raise ValueError("ctg_mode must be 'max' or 'avg'")

    @property
    def effective_teacher_augmentation(self) -> str:
        return self.teacher_augmentation if self.use_intra_tca else "none"


@dataclass
class BranchState:
    """Student optimized by gradients; teacher updated only by EMA."""

    student: ModelParams
    teacher: ModelParams


@dataclass
class StepRecord:
    step: int
    breakdown: LossBreakdown
    ori_loss: float
    aug_loss: float | None = None


@dataclass
class IterationMetrics:
    iteration: int
    pseudo_precision: float
    map_by_iou: dict
    map_avg: float
    co_scene_fp: float


@dataclass
class IterateResult:
    original: BranchState
    augment: BranchState | None
    baseline: BranchState | None = None
    records: list = field(default_factory=list)
    iteration_metrics: list = field(default_factory=list)


class Adam:
    """Adam with decoupled weight decay over a fixed parameter list.

    Missing gradients count as zero, so a parameter that never receives
    gradient changes only through weight decay.
    """

    def __init__(self, params: list[Tensor2], lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= self.lr * self.weight_decay * p.data
            p.grad = None


def ema_update(teacher: ModelParams, student: ModelParams, momentum: float) -> None:
    """teacher <- momentum * teacher + (1 - momentum) * student, in place."""
    for name in teacher.names():
        t, s = teacher[name], student[name]
        if t.data.shape != s.data.shape:
            raise ValueError(f"shape mismatch for {name}")
        t.data *= momentum
        t.data += (1.0 - momentum) * s.data


def _streams(seed: int, itr_key: int) -> dict:
    keys = ("init0", "init1", "batch", "augment")
    return {name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(itr_key, j)))
            for j, name in enumerate(keys)}


def _prep(dataset: Dataset):
    feats = [v.features.astype(np.float64) for v in dataset.train]
    labels = [v.label for v in dataset.train]
    return feats, labels


def _fresh_branch(feature_dim: int, num_classes: int, cfg: TrainConfig,
                  rng: np.random.Generator) -> BranchState:
    student = init_params(feature_dim, num_classes, cfg.hidden_dim, rng)
    return BranchState(student=student, teacher=student.clone(requires_grad=False))


def _branch_losses(params: ModelParams, xs: list, ys: list, cfg: TrainConfig):
    """Per-branch MIL + auxiliary losses, averaged over the batch.

    The batch runs through the network as one stacked (B*T) x F input.
    Returns the loss-term dict for total_loss and the stacked student
    suppressed T-CAM (for the consistency terms).
    """
    t_len = xs[0].shape[0]
    k = L.topk_for(t_len, cfg.topk_divisor)
    x_stack = Tensor2(np.concatenate(xs, axis=0))
    labels = np.stack(ys)
    pair = tcam_forward(x_stack, params, block_len=t_len)
    out = {"cls": L.mil_loss(pair.s, pair.s_bar, labels, k, t_len)}
    if cfg.use_norm_loss:
        out["norm"] = L.norm_loss(pair.a)
    if cfg.use_guide_loss:
        out["guide"] = L.guide_loss(pair.a, pair.s)
    if cfg.use_cas_loss:
        out["cas"] = L.cas_loss(pair.s_bar, x_stack, labels, t_len)
    return out, pair.s_bar


def _branch_total(terms: dict) -> float:
    return float(sum(t.item() for t in terms.values()))


def train_baseline(dataset: Dataset, cfg: TrainConfig, itr_key: int = 0,
                   init_state: BranchState | None = None,
                   step_offset: int = 0) -> tuple[BranchState, list]:
    """Single-branch mean-teacher training under weak labels only.

    Each step optimizes the student on the batch losses plus the
    alpha-weighted consistency term against the teacher's output on the
    same input, then EMA-updates the teacher.
    """
    streams = _streams(cfg.seed, itr_key)
    feats, labels = _prep(dataset)
    spec = dataset.spec
    t_len = spec.segments_per_video
    state = init_state if init_state is not None else _fresh_branch(
        spec.feature_dim, spec.num_classes, cfg, streams["init0"])
    adam = Adam(state.student.tensors(), cfg.lr, cfg.weight_decay)
    records = []
    n = len(feats)
    bsz = min(cfg.batch_size, n)
    for step in range(cfg.steps_per_iteration):
        idx = streams["batch"].choice(n, size=bsz, replace=False)
        xs = [feats[i] for i in idx]
        ys = [labels[i] for i in idx]
        teacher_stack = None
        if cfg.alpha > 0:
            x_all = np.concatenate(xs, axis=0)
            _, _, teacher_stack = tcam_forward_np(x_all, state.teacher, block_len=t_len)
        with Tape() as tape:
            terms, s_bar = _branch_losses(state.student, xs, ys, cfg)
            consistency = None
            if cfg.alpha > 0:
                consistency = L.scc_loss(teacher_stack, s_bar)
            total, bd = L.total_loss([terms], consistency, cfg.alpha)
            if not np.isfinite(total.item()):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            tape.backward(total)
        adam.step()
        ema_update(state.teacher, state.student, cfg.ema_momentum)
        records.append(StepRecord(step=step_offset + step, breakdown=bd,
                                  ori_loss=_branch_total(terms)))
    return state, records


def _derangement(rng: np.random.Generator, n: int, has_context: np.ndarray) -> np.ndarray:
    """Partner assignment with no fixed points, preferring partners that
    actually have context rows to donate."""
    fallback = None
    for _ in range(60):
        perm = rng.permutation(n)
        if np.any(perm == np.arange(n)):
            continue
        if has_context[perm].all():
            return perm
        if fallback is None:
            fallback = perm
    if fallback is not None:
        return fallback
    return np.roll(np.arange(n), 1)


def train_biscc(dataset: Dataset, cfg: TrainConfig, pseudo_model: ModelParams,
                itr_key: int = 0,
                init_original: BranchState | None = None,
                init_augment: BranchState | None = None,
                step_offset: int = 0) -> tuple[BranchState, BranchState, list]:
    """Dual-branch training with the bidirectional consistency constraint.

    Per step: pseudo masks from the frozen ``pseudo_model``; inter-video
    context swap pairs the batch; each branch's teacher sees several
    intra-video relocations whose restored outputs reduce to a
    comprehensive T-CAM; the two comprehensive teacher maps
    cross-supervise the opposite students.
    """
    streams = _streams(cfg.seed, itr_key)
    feats, labels = _prep(dataset)
    spec = dataset.spec
    t_len = spec.segments_per_video
    original = init_original if init_original is not None else _fresh_branch(
        spec.feature_dim, spec.num_classes, cfg, streams["init0"])
    augment = init_augment if init_augment is not None else _fresh_branch(
        spec.feature_dim, spec.num_classes, cfg, streams["init1"])
    adam_o = Adam(original.student.tensors(), cfg.lr, cfg.weight_decay)
    adam_a = Adam(augment.student.tensors(), cfg.lr, cfg.weight_decay)
    records = []
    n = len(feats)
    bsz = min(cfg.batch_size, n)
    aug_mode = cfg.effective_teacher_augmentation
    arng = streams["augment"]
    for step in range(cfg.steps_per_iteration):
        idx = streams["batch"].choice(n, size=bsz, replace=False)
        xs = [feats[i] for i in idx]
        ys = [labels[i] for i in idx]
        masks = [collect_instance_mask(sb, cfg.gamma)
                 for sb in tcam_forward_stack(xs, pseudo_model)]

        if cfg.use_inter_tca and bsz > 1:
            has_ctx = np.array([not m.all() for m in masks])
            partners = _derangement(arng, bsz, has_ctx)
            xs_aug = [inter_tca(xs[i], masks[i], xs[p], masks[p])[0]
                      for i, p in enumerate(partners)]
        else:
            xs_aug = [x.copy() for x in xs]

        ct_ori_stack, ct_aug_stack = None, None
        if cfg.alpha > 0:
            ct_ori_stack = _comprehensive_tcams(xs, masks, original.teacher,
                                                cfg, aug_mode, arng, t_len)
            ct_aug_stack = _comprehensive_tcams(xs_aug, masks, augment.teacher,
                                                cfg, aug_mode, arng, t_len)

        with Tape() as tape:
            terms_o, sbar_o = _branch_losses(original.student, xs, ys, cfg)
            terms_a, sbar_a = _branch_losses(augment.student, xs_aug, ys, cfg)
            bi = None
            if cfg.alpha > 0:
                bi = L.bi_scc_loss(ct_ori_stack, sbar_a, ct_aug_stack, sbar_o)
            total, bd = L.total_loss([terms_o, terms_a], bi, cfg.alpha)
            if not np.isfinite(total.item()):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            tape.backward(total)
        adam_o.step()
        adam_a.step()
        ema_update(original.teacher, original.student, cfg.ema_momentum)
        ema_update(augment.teacher, augment.student, cfg.ema_momentum)
        records.append(StepRecord(step=step_offset + step, breakdown=bd,
                                  ori_loss=_branch_total(terms_o),
                                  aug_loss=_branch_total(terms_a)))
    return original, augment, records


def _comprehensive_tcams(xs: list, masks: list, teacher: ModelParams,
                         cfg: TrainConfig, aug_mode: str,
                         rng: np.random.Generator, t_len: int) -> np.ndarray:
    """Stacked per-video comprehensive T-CAMs, (B*T) x (C+1).

    All equal-length teacher variants across the batch run as one
    forward; resolution-transformed variants fall back to per-variant
    forwards and are resampled back to full length before reduction.
    """
    all_variants, all_perms = [], []
    for x, m in zip(xs, masks):
        variants, perms = teacher_variants(x, m, aug_mode, cfg.ctg_k,
                                           cfg.inflate_delta, rng)
        all_variants.append(variants)
        all_perms.append(perms)
    uniform = all(v.shape[0] == t_len for vs in all_variants for v in vs)
    if uniform:
        flat = [v for vs in all_variants for v in vs]
        sbars = tcam_forward_stack(flat, teacher)
    else:
        sbars = []
        for vs in all_variants:
            for v in vs:
                sb = tcam_forward_np(v, teacher)[2]
                if sb.shape[0] != t_len:
                    sb = resample_time(sb, t_len)
                sbars.append(sb)
    k = cfg.ctg_k
    outs = [ctg(sbars[i * k:(i + 1) * k], all_perms[i], cfg.ctg_mode)
            for i in range(len(xs))]
    return np.concatenate(outs, axis=0)


def pseudo_label_precision(pseudo_model: ModelParams, videos, gamma: float) -> float:
    """Micro-averaged precision of the pseudo-foreground masks against
    the true action intervals; vacuously 1.0 when nothing fires."""
    hits, size = 0, 0
    sbars = tcam_forward_stack([v.features.astype(np.float64) for v in videos],
                               pseudo_model)
    for v, s_bar in zip(videos, sbars):
        h, s = mask_counts(collect_instance_mask(s_bar, gamma), v.gt_segments)
        hits += h
        size += s
    return hits / size if size else 1.0


def iterate(dataset: Dataset, cfg: TrainConfig,
            loc_cfg: LocalizeConfig | None = None,
            eval_ious=(0.3, 0.5, 0.7)) -> IterateResult:
    """Full pipeline: iteration 1 trains the baseline whose student seeds
    the pseudo-labels; later iterations run the dual-branch trainer and
    promote its original-branch student to pseudo-labeler.  Branches are
    warm-started from the previous iteration.
    """
    if loc_cfg is None:
        loc_cfg = LocalizeConfig(topk_divisor=cfg.topk_divisor)
    result = IterateResult(original=None, augment=None)
    step_offset = 0

    baseline, records = train_baseline(dataset, cfg, itr_key=0)
    step_offset += len(records)
    result.records.extend(records)
    pseudo = baseline.student.clone(requires_grad=False)
    result.original = baseline
    result.baseline = BranchState(student=baseline.student.clone(requires_grad=False),
                                  teacher=baseline.teacher.clone(requires_grad=False))
    result.iteration_metrics.append(
        _iteration_metrics(1, pseudo, baseline.student, dataset, cfg, loc_cfg, eval_ious))

    prev_o: BranchState | None = None
    prev_a: BranchState | None = None
    for itr in range(2, cfg.iterations + 1):
        init_o = prev_o if prev_o is not None else _clone_branch(baseline)
        init_a = prev_a if prev_a is not None else _clone_branch(baseline)
        branch_o, branch_a, records = train_biscc(
            dataset, cfg, pseudo, itr_key=itr, init_original=init_o,
            init_augment=init_a, step_offset=step_offset)
        step_offset += len(records)
        result.records.extend(records)
        pseudo = branch_o.student.clone(requires_grad=False)
        prev_o, prev_a = branch_o, branch_a
        result.original, result.augment = branch_o, branch_a
        result.iteration_metrics.append(
            _iteration_metrics(itr, pseudo, branch_o.student, dataset, cfg,
                               loc_cfg, eval_ious))
    return result


def _clone_branch(state: BranchState) -> BranchState:
    return BranchState(student=state.student.clone(requires_grad=True),
                       teacher=state.teacher.clone(requires_grad=False))


def _iteration_metrics(iteration: int, pseudo: ModelParams, eval_model: ModelParams,
                       dataset: Dataset, cfg: TrainConfig, loc_cfg: LocalizeConfig,
                       eval_ious) -> IterationMetrics:
    q = pseudo_label_precision(pseudo, dataset.train, cfg.gamma)
    report = evaluate_model(eval_model, dataset.test, loc_cfg, eval_ious)
    fp = co_scene_false_positive_rate(eval_model, dataset.test, cfg.gamma)
    return IterationMetrics(iteration=iteration, pseudo_precision=q,
                            map_by_iou=report.map_by_iou, map_avg=report.average,
                            co_scene_fp=fp)


def metrics_rows(records: list, iteration_marks: dict | None = None) -> list:
    """CSV rows (as strings) for the step metrics log."""
    marks = iteration_marks or {}
    header = "step,loss_total,loss_cls,loss_bi_scc,loss_norm,loss_guide,loss_cas,q,map50"
    rows = [header]
    for r in records:
        bd = r.breakdown
        q, map50 = marks.get(r.step, ("", ""))
        rows.append(f"{r.step},{bd.total:.10g},{bd.cls:.10g},{bd.bi_scc:.10g},"
                    f"{bd.norm:.10g},{bd.guide:.10g},{bd.cas:.10g},{q},{map50}")
    return rows


def make_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(), **overrides)

"""Scikit-learn style estimators wrapping the training pipelines.

``BaselineLocalizer`` runs the single-branch mean-teacher trainer;
``BiSccLocalizer`` runs the full dual-branch pipeline with iterative
pseudo-label refresh.  Both fit on a (n_videos, T, F) feature stack and
an (n_videos, C) binary label matrix, predict per-video action proposals,
and expose get_params/set_params so they compose with sklearn tooling.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import Dataset, SyntheticSpec, VideoSample
from .localize import LocalizeConfig, evaluate_map, localize_video
from .losses import topk_for
from .network import tcam_forward_np
from .numeric import row_softmax
from .trainer import TrainConfig, iterate, train_baseline
from .validation import check_feature_array, check_label_matrix, check_segment_lists


def dataset_from_arrays(X: np.ndarray, y: np.ndarray, ids=None) -> Dataset:
    """Wrap validated arrays as an in-memory training dataset."""
    n, t_len, f_dim = X.shape
    if ids is None:
        ids = [f"v{i:05d}" for i in range(n)]
    spec = SyntheticSpec(num_classes=y.shape[1], segments_per_video=t_len,
                         feature_dim=f_dim, actions_per_video=(1, 1),
                         action_length=(1, 1), scene_correlation=0.0,
                         co_scene_fraction=0.0, noise_sigma=0.0,
                         train_videos=n, test_videos=0)
    train = [VideoSample(video_id=ids[i], features=X[i].astype(np.float32),
                         label=y[i]) for i in range(n)]
    return Dataset(train=train, test=[], spec=spec)


class _LocalizerMixin:
    """Prediction-side behaviour shared by both trainers."""

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit() first")

    def _localize_config(self) -> LocalizeConfig:
        return LocalizeConfig(class_threshold=self.class_threshold,
                              nms_iou=self.nms_iou,
                              topk_divisor=self.topk_divisor)

    def _validate_X(self, X) -> np.ndarray:
        arr = check_feature_array(X)
        if arr.shape[2] != self.model_.feature_dim:
            raise ValueError(f"expected {self.model_.feature_dim} features, "
                             f"got {arr.shape[2]}")
        return arr

    def predict(self, X) -> list:
        """Per-video lists of localized action proposals."""
        self._check_fitted()
        arr = self._validate_X(X)
        cfg = self._localize_config()
        return [localize_video(self.model_, arr[i], cfg) for i in range(arr.shape[0])]

    def transform(self, X) -> np.ndarray:
        """Per-segment class probabilities from the suppressed T-CAM,
        shape (n_videos, T, C+1)."""
        self._check_fitted()
        arr = self._validate_X(X)
        out = [row_softmax(tcam_forward_np(arr[i], self.model_)[2])
               for i in range(arr.shape[0])]
        return np.stack(out)

    def predict_video_proba(self, X) -> np.ndarray:
        """Video-level class probabilities, shape (n_videos, C+1)."""
        self._check_fitted()
        arr = self._validate_X(X)
        k = topk_for(arr.shape[1], self.topk_divisor)
        rows = []
        for i in range(arr.shape[0]):
            _, _, s_bar = tcam_forward_np(arr[i], self.model_)
            pooled = np.sort(s_bar, axis=0)[::-1][:k].mean(axis=0)
            rows.append(row_softmax(pooled.reshape(1, -1))[0])
        return np.stack(rows)

    def score(self, X, y_segments) -> float:
        """Mean detection mAP over IoU {0.3, 0.5, 0.7}."""
        self._check_fitted()
        arr = self._validate_X(X)
        segs = check_segment_lists(y_segments, arr.shape[0],
                                   self.model_.num_classes, arr.shape[1])
        proposals = {str(i): p for i, p in enumerate(self.predict(arr))}
        gt = {str(i): segs[i] for i in range(arr.shape[0])}
        return evaluate_map(proposals, gt, (0.3, 0.5, 0.7))["avg"]


class BaselineLocalizer(_LocalizerMixin, BaseEstimator):
    """Weakly-supervised action localizer trained with the mean-teacher
    baseline objective (MIL classification + attention regularizers +
    same-input consistency)."""

    def __init__(self, alpha=0.25, gamma=0.6, topk_divisor=8, lr=5e-4,
                 weight_decay=1e-3, ema_momentum=0.999, batch_size=10,
                 n_steps=1500, hidden_dim=None, use_norm_loss=True,
                 use_guide_loss=True, use_cas_loss=True,
                 class_threshold=0.2, nms_iou=0.45, seed=0):
        self.alpha = alpha
        self.gamma = gamma
        self.topk_divisor = topk_divisor
        self.lr = lr
        self.weight_decay = weight_decay
        self.ema_momentum = ema_momentum
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.hidden_dim = hidden_dim
        self.use_norm_loss = use_norm_loss
        self.use_guide_loss = use_guide_loss
        self.use_cas_loss = use_cas_loss
        self.class_threshold = class_threshold
        self.nms_iou = nms_iou
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, gamma=self.gamma,
                           topk_divisor=self.topk_divisor, lr=self.lr,
                           weight_decay=self.weight_decay,
                           ema_momentum=self.ema_momentum,
                           batch_size=self.batch_size,
                           steps_per_iteration=self.n_steps,
                           iterations=1, seed=self.seed,
                           hidden_dim=self.hidden_dim,
                           use_norm_loss=self.use_norm_loss,
                           use_guide_loss=self.use_guide_loss,
                           use_cas_loss=self.use_cas_loss)

    def fit(self, X, y):
        arr = check_feature_array(X)
        labels = check_label_matrix(y, arr.shape[0])
        dataset = dataset_from_arrays(arr, labels)
        state, records = train_baseline(dataset, self._train_config())
        self.model_ = state.student
        self.teacher_ = state.teacher
        self.records_ = records
        self.n_classes_ = labels.shape[1]
        return self


class BiSccLocalizer(_LocalizerMixin, BaseEstimator):
    """Weakly-supervised action localizer trained with the dual-branch
    bidirectional consistency pipeline and iterative pseudo-labels."""

    def __init__(self, alpha=0.25, gamma=0.6, ctg_k=3, inflate_delta=1,
                 topk_divisor=8, lr=5e-4, weight_decay=1e-3,
                 ema_momentum=0.999, batch_size=10, n_steps=1500,
                 iterations=3, ctg_mode="max", hidden_dim=None,
                 use_norm_loss=True, use_guide_loss=True, use_cas_loss=True,
                 use_inter_tca=True, use_intra_tca=True,
                 teacher_augmentation="intra_tca",
                 class_threshold=0.2, nms_iou=0.45, seed=0):
        self.alpha = alpha
        self.gamma = gamma
        self.ctg_k = ctg_k
        self.inflate_delta = inflate_delta
        self.topk_divisor = topk_divisor
        self.lr = lr
        self.weight_decay = weight_decay
        self.ema_momentum = ema_momentum
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.iterations = iterations
        self.ctg_mode = ctg_mode
        self.hidden_dim = hidden_dim
        self.use_norm_loss = use_norm_loss
        self.use_guide_loss = use_guide_loss
        self.use_cas_loss = use_cas_loss
        self.use_inter_tca = use_inter_tca
        self.use_intra_tca = use_intra_tca
        self.teacher_augmentation = teacher_augmentation
        self.class_threshold = class_threshold
        self.nms_iou = nms_iou
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, gamma=self.gamma, ctg_k=self.ctg_k,
                           inflate_delta=self.inflate_delta,
                           topk_divisor=self.topk_divisor, lr=self.lr,
                           weight_decay=self.weight_decay,
                           ema_momentum=self.ema_momentum,
                           batch_size=self.batch_size,
                           steps_per_iteration=self.n_steps,
                           iterations=self.iterations, ctg_mode=self.ctg_mode,
                           seed=self.seed, hidden_dim=self.hidden_dim,
                           use_norm_loss=self.use_norm_loss,
                           use_guide_loss=self.use_guide_loss,
                           use_cas_loss=self.use_cas_loss,
                           use_inter_tca=self.use_inter_tca,
                           use_intra_tca=self.use_intra_tca,
                           teacher_augmentation=self.teacher_augmentation)

    def fit(self, X, y):
        arr = check_feature_array(X)
        labels = check_label_matrix(y, arr.shape[0])
        dataset = dataset_from_arrays(arr, labels)
        result = iterate(dataset, self._train_config(),
                         loc_cfg=self._localize_config())
        self.model_ = result.original.student
        self.teacher_ = result.original.teacher
        self.records_ = result.records
        self.iteration_metrics_ = result.iteration_metrics
        self.n_classes_ = labels.shape[1]
        return self

"""Pseudo-label collection and the temporal context augmentations.

Inter-video augmentation swaps the pseudo-context rows of two videos
(the action rows are copied verbatim); intra-video augmentation relocates
action instances and is represented as an explicit block permutation so
the inverse restore is exact and testable.  The comprehensive T-CAM
reduction combines several restored teacher outputs elementwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import resample_time
from .numeric import row_softmax

TEACHER_AUGMENTATIONS = ("intra_tca", "temporal_flip", "resolution_transform",
                         "random_mask", "gaussian_noise", "none")


def collect_instance_mask(s_bar: np.ndarray, gamma: float) -> np.ndarray:
    """Binary pseudo-label mask from a background-suppressed T-CAM.

    A segment is pseudo-action (1) iff its highest action-class
    probability under the row softmax exceeds ``gamma``; the background
    column never votes.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must be in (0, 1)")
    probs = row_softmax(np.asarray(s_bar, dtype=np.float64))
    action_max = probs[:, :-1].max(axis=1)
    return (action_max > gamma).astype(np.uint8)


def mask_to_instances(mask: np.ndarray) -> list:
    """Maximal runs of 1s as half-open (start, end) intervals, by start."""
    m = np.asarray(mask).astype(bool)
    out = []
    t = 0
    t_len = len(m)
    while t < t_len:
        if m[t]:
            s = t
            while t < t_len and m[t]:
                t += 1
            out.append((s, t))
        else:
            t += 1
    return out


def inter_tca(x1: np.ndarray, m1: np.ndarray, x2: np.ndarray,
              m2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Swap pseudo-context rows between two videos.

    Rows where the mask is 1 are copied bit-exactly from the original;
    context rows are replaced by the partner's context rows, linearly
    resampled to full length.  A partner with no context rows leaves the
    affected side unchanged.
    """
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    if x1.shape != x2.shape:
        raise ValueError("videos must share T x F shape")
    if len(m1) != x1.shape[0] or len(m2) != x2.shape[0]:
        raise ValueError("mask length mismatch")
    return _one_side(x1, m1, x2, m2), _one_side(x2, m2, x1, m1)


def _one_side(x: np.ndarray, m: np.ndarray, partner: np.ndarray,
              partner_mask: np.ndarray) -> np.ndarray:
    m = np.asarray(m).astype(bool)
    ctx = partner[~np.asarray(partner_mask).astype(bool)]
    if ctx.shape[0] == 0 or m.all():
        return x.copy()
    up = resample_time(ctx, x.shape[0])
    out = up.copy()
    out[m] = x[m]
    return out


@dataclass(frozen=True)
class BlockPermutation:
    """Row reordering with its exact inverse.

    ``perm`` is gather indices: applying yields x[perm]; ``inv`` is
    argsort(perm), so inverting after applying restores the input
    bit-exactly.
    """

    perm: np.ndarray
    inv: np.ndarray

    @staticmethod
    def from_order(order: np.ndarray) -> "BlockPermutation":
        order = np.asarray(order, dtype=np.int64)
        t_len = len(order)
        if sorted(order.tolist()) != list(range(t_len)):
            raise ValueError("order is not a permutation")
        return BlockPermutation(perm=order, inv=np.argsort(order))

    @staticmethod
    def identity(t_len: int) -> "BlockPermutation":
        idx = np.arange(t_len, dtype=np.int64)
        return BlockPermutation(perm=idx, inv=idx.copy())

    @property
    def size(self) -> int:
        return len(self.perm)

    def is_identity(self) -> bool:
        return bool(np.all(self.perm == np.arange(self.size)))


def apply_perm(p: BlockPermutation, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != p.size:
        raise ValueError(f"permutation over {p.size} rows applied to {x.shape[0]}")
    return x[p.perm]


def invert_perm(p: BlockPermutation, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != p.size:
        raise ValueError(f"permutation over {p.size} rows applied to {x.shape[0]}")
    return x[p.inv]


def _inflate(instances: list, chosen: int, delta: int, t_len: int) -> tuple[int, int]:
    """Grow instance ``chosen`` by delta per side, clamped to the video
    bounds and to the neighbouring instances."""
    s, e = instances[chosen]
    lo = 0 if chosen == 0 else instances[chosen - 1][1]
    hi = t_len if chosen == len(instances) - 1 else instances[chosen + 1][0]
    return max(lo, s - delta), min(hi, e + delta)


def intra_tca(mask: np.ndarray, delta: int, rng: np.random.Generator) -> BlockPermutation:
    """Build the block permutation that relocates action instances.

    Two instances (inflated by ``delta`` segments per side) swap places;
    a single instance moves to a uniformly random offset; no instances
    yields the identity.  Non-action rows keep their relative order.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    mask = np.asarray(mask)
    t_len = len(mask)
    instances = mask_to_instances(mask)
    if not instances:
        return BlockPermutation.identity(t_len)
    idx = np.arange(t_len, dtype=np.int64)
    if len(instances) == 1:
        s, e = _inflate(instances, 0, delta, t_len)
        block = idx[s:e]
        others = np.concatenate([idx[:s], idx[e:]])
        offset = int(rng.integers(0, len(others) + 1))
        order = np.concatenate([others[:offset], block, others[offset:]])
        return BlockPermutation.from_order(order)
    pick = rng.choice(len(instances), size=2, replace=False)
    first, second = int(min(pick)), int(max(pick))
    s1, e1 = _inflate(instances, first, delta, t_len)
    s2, e2 = _inflate(instances, second, delta, t_len)
    if second == first + 1:
        # adjacent instances share the gap; never let inflation overlap
        s2 = max(s2, e1)
    order = np.concatenate([idx[:s1], idx[s2:e2], idx[e1:s2], idx[s1:e1], idx[e2:]])
    return BlockPermutation.from_order(order)


def ctg(tcams: list, perms: list, mode: str = "max") -> np.ndarray:
    """Comprehensive suppressed T-CAM: undo each permutation, then reduce
    elementwise (max by default, mean as the alternative)."""
    if not tcams:
        raise ValueError("ctg needs at least one T-CAM")
    if len(tcams) != len(perms):
        raise ValueError("one permutation per T-CAM required")
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown ctg mode {mode!r}")
    restored = np.stack([invert_perm(p, np.asarray(t)) for t, p in zip(tcams, perms)])
    if mode == "max":
        return restored.max(axis=0)
    return restored.mean(axis=0)


def teacher_variants(x: np.ndarray, mask: np.ndarray, mode: str, count: int,
                     delta: int, rng: np.random.Generator) -> tuple[list, list]:
    """Inputs for the teacher's comprehensive T-CAM, plus restore info.

    Returns ``count`` augmented copies of ``x`` and matching
    BlockPermutations for ctg().  Only the permutation-style modes
    (intra_tca, temporal_flip) move rows; the others perturb values in
    place and restore with the identity.  resolution_transform resamples
    to a random length and the caller's T-CAM is resampled back before
    reduction, so those variants are returned already at full length via
    a wrapper in the trainer.
    """
    t_len = x.shape[0]
    xs, perms = [], []
    for _ in range(count):
        if mode == "intra_tca":
            p = intra_tca(mask, delta, rng)
            xs.append(apply_perm(p, x))
            perms.append(p)
        elif mode == "temporal_flip":
            p = BlockPermutation.from_order(np.arange(t_len - 1, -1, -1))
            xs.append(apply_perm(p, x))
            perms.append(p)
        elif mode == "random_mask":
            x2 = x.copy()
            drop = rng.random(t_len) < 0.1
            x2[drop] = 0.0
            xs.append(x2)
            perms.append(BlockPermutation.identity(t_len))
        elif mode == "gaussian_noise":
            xs.append(x + 0.1 * rng.standard_normal(x.shape))
            perms.append(BlockPermutation.identity(t_len))
        elif mode == "resolution_transform":
            t_new = max(2, int(round(t_len * rng.uniform(0.5, 1.5))))
            xs.append(resample_time(x, t_new))
            perms.append(BlockPermutation.identity(t_len))
        elif mode == "none":
            xs.append(x)
            perms.append(BlockPermutation.identity(t_len))
        else:
            raise ValueError(f"unknown teacher augmentation {mode!r}")
    return xs, perms

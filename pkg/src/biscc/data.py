"""Dataset types, the synthetic co-scene-confound generator, temporal
resampling, and the bit-exact on-disk dataset format.

The generator plants, per class, two orthonormal feature-space directions:
an action signature and a scene signature.  True action segments carry
``action_sig + rho * scene_sig``; a configurable fraction of the context
segments carry the scene signature alone ("co-scene" segments, the
confound a classifier latches onto); the remaining context is isotropic
noise.  Co-scene positions are kept as generator bookkeeping so the
false-positive rate on them can be measured.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

MAGIC = b"BSCC"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised on magic/version mismatch, truncation, or checksum failure."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic confound benchmark."""

    num_classes: int = 5
    segments_per_video: int = 64
    feature_dim: int = 32
    actions_per_video: tuple[int, int] = (1, 3)
    action_length: tuple[int, int] = (4, 12)
    scene_correlation: float = 0.8
    co_scene_fraction: float = 0.3
    noise_sigma: float = 0.1
    train_videos: int = 200
    test_videos: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.scene_correlation <= 1.0):
            raise ValueError("scene_correlation must be in [0, 1]")
        if not (0.0 <= self.co_scene_fraction <= 1.0):
            raise ValueError("co_scene_fraction must be in [0, 1]")
        if self.feature_dim % 2 != 0:
            raise ValueError("feature_dim must be even (rgb/flow halves)")
        if self.action_length[1] > self.segments_per_video:
            raise ValueError("action length exceeds segments_per_video")
        if self.action_length[0] < 1 or self.actions_per_video[0] < 1:
            raise ValueError("need at least one action of length >= 1")
        if 2 * self.num_classes > self.feature_dim:
            raise ValueError("feature_dim too small for orthonormal signatures")


@dataclass(eq=False)
class VideoSample:
    """One video: features, weak label, and evaluation-only annotations.

    ``features`` is T x F float32 with the first F/2 columns the rgb
    stream and the last F/2 the flow stream.  ``gt_segments`` and
    ``co_scene_segments`` hold (class, start, end) half-open segment
    triples and are never visible to training.
    """

    video_id: str
    features: np.ndarray
    label: np.ndarray
    gt_segments: tuple = ()
    co_scene_segments: tuple = ()

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.label = np.ascontiguousarray(self.label, dtype=np.uint8)
        t_len = self.features.shape[0]
        n_classes = self.label.shape[0]
        for cls, s, e in self.gt_segments:
            if not (0 <= s < e <= t_len):
                raise ValueError(f"segment ({s},{e}) outside [0,{t_len})")
            if cls >= n_classes:
                raise ValueError(f"segment class {cls} >= {n_classes}")

    @property
    def num_segments(self) -> int:
        return self.features.shape[0]

    def rgb(self) -> np.ndarray:
        return self.features[:, : self.features.shape[1] // 2]

    def flow(self) -> np.ndarray:
        return self.features[:, self.features.shape[1] // 2:]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoSample):
            return NotImplemented
        return (self.video_id == other.video_id
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes()
                and np.array_equal(self.label, other.label)
                and tuple(self.gt_segments) == tuple(other.gt_segments)
                and tuple(self.co_scene_segments) == tuple(other.co_scene_segments))


@dataclass(eq=False)
class Dataset:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        ids = [v.video_id for v in self.train] + [v.video_id for v in self.test]
        if len(ids) != len(set(ids)):
            raise ValueError("video ids must be disjoint across splits")
        for v in self.train + self.test:
            if v.features.shape != (self.spec.segments_per_video, self.spec.feature_dim):
                raise ValueError(f"{v.video_id}: feature shape {v.features.shape} "
                                 f"does not match spec")
            if v.label.shape[0] != self.spec.num_classes:
                raise ValueError(f"{v.video_id}: label length mismatch")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.spec == other.spec and self.train == other.train
                and self.test == other.test)


def class_signatures(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Seeded orthonormal (action, scene) signature directions per class.

    Gram-Schmidt over Gaussian draws; rows 2c / 2c+1 of the raw draw
    become action_sig(c) / scene_sig(c).
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    raw = rng.standard_normal((2 * spec.num_classes, spec.feature_dim))
    basis = np.zeros_like(raw)
    for i in range(raw.shape[0]):
        v = raw[i].copy()
        for j in range(i):
            v -= np.dot(v, basis[j]) * basis[j]
        basis[i] = v / np.linalg.norm(v)
    return basis[0::2], basis[1::2]


def _place_instances(rng: np.random.Generator, spec: SyntheticSpec) -> list:
    """Non-overlapping, non-adjacent (class, start, end) action instances."""
    t_len = spec.segments_per_video
    n_target = int(rng.integers(spec.actions_per_video[0], spec.actions_per_video[1] + 1))
    placed: list[tuple[int, int, int]] = []
    attempts = 0
    while len(placed) < n_target and attempts < 200:
        attempts += 1
        length = int(rng.integers(spec.action_length[0], spec.action_length[1] + 1))
        start = int(rng.integers(0, t_len - length + 1))
        end = start + length
        # keep a 1-segment gap so instances stay distinct in the mask
        if any(start < pe + 1 and ps - 1 < end for _, ps, pe in placed):
            continue
        cls = int(rng.integers(0, spec.num_classes))
        placed.append((cls, start, end))
    placed.sort(key=lambda seg: seg[1])
    return placed


def _generate_video(rng: np.random.Generator, spec: SyntheticSpec, video_id: str,
                    action_sigs: np.ndarray, scene_sigs: np.ndarray) -> VideoSample:
    t_len, f_dim = spec.segments_per_video, spec.feature_dim
    instances = _place_instances(rng, spec)
    label = np.zeros(spec.num_classes, dtype=np.uint8)
    for cls, _, _ in instances:
        label[cls] = 1
    own_classes = np.flatnonzero(label)

    base = np.zeros((t_len, f_dim))
    in_action = np.zeros(t_len, dtype=bool)
    for cls, s, e in instances:
        base[s:e] = action_sigs[cls] + spec.scene_correlation * scene_sigs[cls]
        in_action[s:e] = True

    co_scene_cls = np.full(t_len, -1, dtype=np.int64)
    for t in range(t_len):
        if in_action[t]:
            continue
        if rng.random() < spec.co_scene_fraction:
            cls = int(own_classes[rng.integers(0, len(own_classes))])
            base[t] = scene_sigs[cls]
            co_scene_cls[t] = cls
        else:
            v = rng.standard_normal(f_dim)
            base[t] = v / np.linalg.norm(v)
    if spec.noise_sigma > 0:
        base = base + spec.noise_sigma * rng.standard_normal((t_len, f_dim))

    co_scene = []
    t = 0
    while t < t_len:
        if co_scene_cls[t] >= 0:
            s = t
            while t < t_len and co_scene_cls[t] == co_scene_cls[s]:
                t += 1
            co_scene.append((int(co_scene_cls[s]), s, t))
        else:
            t += 1

    return VideoSample(video_id=video_id,
                       features=base.astype(np.float32),
                       label=label,
                       gt_segments=tuple(instances),
                       co_scene_segments=tuple(co_scene))


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate the confound benchmark; byte-identical for a fixed seed."""
    action_sigs, scene_sigs = class_signatures(spec)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(1,)))
    train = [_generate_video(rng, spec, f"train{i:04d}", action_sigs, scene_sigs)
             for i in range(spec.train_videos)]
    test = [_generate_video(rng, spec, f"test{i:04d}", action_sigs, scene_sigs)
            for i in range(spec.test_videos)]
    return Dataset(train=train, test=test, spec=spec)


def resample_time(x: np.ndarray, t_target: int) -> np.ndarray:
    """Linear interpolation along time, endpoints aligned.

    Sample positions are t' * (T-1) / (T_target-1); T_target = 1 takes
    row 0.  Integer positions copy rows exactly, so t_target == T is the
    identity and constants are preserved.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("input must be a non-empty T x F array")
    t_len = x.shape[0]
    if t_target < 1:
        raise ValueError("t_target must be >= 1")
    if t_target == 1 or t_len == 1:
        return np.repeat(x[:1].copy(), t_target, axis=0)
    pos = np.arange(t_target) * (t_len - 1) / (t_target - 1)
    i0 = np.floor(pos).astype(np.int64)
    i0 = np.minimum(i0, t_len - 1)
    i1 = np.minimum(i0 + 1, t_len - 1)
    frac = pos - i0
    out = x[i0] * (1.0 - frac)[:, None] + x[i1] * frac[:, None]
    exact = frac == 0.0
    out[exact] = x[i0[exact]]
    return out.astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# on-disk format: magic "BSCC", version u16, little-endian header
# (C, T, F, split sizes, generator spec), per-video blocks, trailing CRC32
# ---------------------------------------------------------------------------

def _pack_label(label: np.ndarray) -> bytes:
    return np.packbits(label, bitorder="little").tobytes()


def _unpack_label(raw: bytes, n_classes: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    return bits[:n_classes].astype(np.uint8)


def _pack_segments(segs) -> bytes:
    out = [struct.pack("<I", len(segs))]
    for cls, s, e in segs:
        out.append(struct.pack("<IIH", s, e, cls))
    return b"".join(out)


def _pack_video(v: VideoSample, n_classes: int) -> bytes:
    ident = v.video_id.encode("utf-8")
    parts = [struct.pack("<H", len(ident)), ident,
             _pack_label(v.label),
             _pack_segments(v.gt_segments),
             _pack_segments(v.co_scene_segments),
             v.features.astype("<f4").tobytes()]
    return b"".join(parts)


def save_dataset(dataset: Dataset, path) -> None:
    spec = dataset.spec
    header = struct.pack("<IIIII", spec.num_classes, spec.segments_per_video,
                         spec.feature_dim, len(dataset.train), len(dataset.test))
    header += struct.pack("<IIII", *spec.actions_per_video, *spec.action_length)
    header += struct.pack("<dddq", spec.scene_correlation, spec.co_scene_fraction,
                          spec.noise_sigma, spec.seed)
    header += struct.pack("<II", spec.train_videos, spec.test_videos)
    body = bytearray()
    body += MAGIC
    body += struct.pack("<H", FORMAT_VERSION)
    body += header
    for v in dataset.train + dataset.test:
        body += _pack_video(v, spec.num_classes)
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    body += struct.pack("<I", crc)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise DatasetFormatError("truncated dataset file")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_segments(r: _Reader) -> tuple:
    (count,) = r.unpack("<I")
    segs = []
    for _ in range(count):
        s, e, cls = r.unpack("<IIH")
        segs.append((cls, s, e))
    return tuple(segs)


def _read_video(r: _Reader, n_classes: int, t_len: int, f_dim: int) -> VideoSample:
    (id_len,) = r.unpack("<H")
    video_id = r.take(id_len).decode("utf-8")
    label = _unpack_label(r.take((n_classes + 7) // 8), n_classes)
    gt = _read_segments(r)
    co = _read_segments(r)
    feats = np.frombuffer(r.take(t_len * f_dim * 4), dtype="<f4")
    feats = feats.reshape(t_len, f_dim).copy()
    return VideoSample(video_id=video_id, features=feats, label=label,
                       gt_segments=gt, co_scene_segments=co)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 2 + 4:
        raise DatasetFormatError("truncated dataset file")
    payload, tail = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", tail)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise DatasetFormatError("checksum failure")
    r = _Reader(payload)
    if r.take(4) != MAGIC:
        raise DatasetFormatError("bad magic; not a dataset file")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {version}")
    n_classes, t_len, f_dim, n_train, n_test = r.unpack("<IIIII")
    a_min, a_max, l_min, l_max = r.unpack("<IIII")
    rho, cosf, sigma, seed = r.unpack("<dddq")
    spec_train, spec_test = r.unpack("<II")
    spec = SyntheticSpec(num_classes=n_classes, segments_per_video=t_len,
                         feature_dim=f_dim, actions_per_video=(a_min, a_max),
                         action_length=(l_min, l_max), scene_correlation=rho,
                         co_scene_fraction=cosf, noise_sigma=sigma,
                         train_videos=spec_train, test_videos=spec_test, seed=seed)
    train = [_read_video(r, n_classes, t_len, f_dim) for _ in range(n_train)]
    test = [_read_video(r, n_classes, t_len, f_dim) for _ in range(n_test)]
    if r.off != len(payload):
        raise DatasetFormatError("trailing bytes after last video")
    return Dataset(train=train, test=test, spec=spec)


def with_seed(spec: SyntheticSpec, seed: int) -> SyntheticSpec:
    return replace(spec, seed=seed)

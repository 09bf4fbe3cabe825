"""T-CAM generation networks: class-agnostic attention and the segment
classifier with a single-head self-attention (non-local) front end.

The attention unit is three temporal convolutions ending in a sigmoid;
the classifier is a residual self-attention layer followed by four
temporal convolutions whose last head emits C+1 logits (class C is the
background).  The background-suppressed T-CAM is the attention-weighted
logit matrix.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor2

CHECKPOINT_MAGIC = b"BSCP"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class ModelParams:
    """Named learnable tensors for one attention unit + classifier."""

    def __init__(self, params: dict[str, Tensor2], feature_dim: int,
                 hidden_dim: int, num_classes: int):
        self.params = params
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.num_classes = num_classes

    def __getitem__(self, name: str) -> Tensor2:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params.keys())

    def tensors(self) -> list[Tensor2]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def clone(self, requires_grad: bool = False) -> "ModelParams":
        copied = {name: Tensor2(t.data.copy(), requires_grad=requires_grad)
                  for name, t in self.params.items()}
        return ModelParams(copied, self.feature_dim, self.hidden_dim, self.num_classes)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.params.values()])


def _layer_sizes(feature_dim: int, hidden_dim: int, num_classes: int) -> list:
    c1 = num_classes + 1
    return [
        ("att.conv0", 3, feature_dim, hidden_dim),
        ("att.conv1", 3, hidden_dim, hidden_dim),
        ("att.conv2", 1, hidden_dim, 1),
        ("cls.attn.wq", 1, feature_dim, feature_dim),
        ("cls.attn.wk", 1, feature_dim, feature_dim),
        ("cls.attn.wv", 1, feature_dim, feature_dim),
        ("cls.conv0", 3, feature_dim, hidden_dim),
        ("cls.conv1", 3, hidden_dim, hidden_dim),
        ("cls.conv2", 3, hidden_dim, hidden_dim),
        ("cls.conv3", 1, hidden_dim, c1),
    ]


def init_params(feature_dim: int, num_classes: int, hidden_dim: int | None = None,
                rng: np.random.Generator | None = None) -> ModelParams:
    """Seeded uniform init in [-a, a], a = sqrt(1 / (k * fan_in)) per layer."""
    if hidden_dim is None:
        hidden_dim = feature_dim
    if rng is None:
        rng = np.random.default_rng(0)
    params: dict[str, Tensor2] = {}
    for name, k, fan_in, fan_out in _layer_sizes(feature_dim, hidden_dim, num_classes):
        a = np.sqrt(1.0 / (k * fan_in))
        if name.startswith("cls.attn"):
            params[name] = Tensor2(rng.uniform(-a, a, size=(fan_in, fan_out)),
                                   requires_grad=True)
        else:
            params[name] = Tensor2(rng.uniform(-a, a, size=(k * fan_in, fan_out)),
                                   requires_grad=True)
            params[name + ".b"] = Tensor2(rng.uniform(-a, a, size=(1, fan_out)),
                                          requires_grad=True)
    return ModelParams(params, feature_dim, hidden_dim, num_classes)


@dataclass
class TCamPair:
    """T-CAM logits S, attention A in (0,1), and suppressed T-CAM A*S."""

    s: Tensor2
    a: Tensor2
    s_bar: Tensor2


def _as_input(x) -> Tensor2:
    return x if isinstance(x, Tensor2) else Tensor2(np.asarray(x, dtype=np.float64))


def attention_forward(x, p: ModelParams, block_len: int | None = None) -> Tensor2:
    """Class-agnostic attention: conv-ReLU-conv-ReLU-conv-sigmoid, T x 1.

    ``block_len`` treats the rows as stacked independent videos of that
    length (padding never crosses a block boundary)."""
    x = _as_input(x)
    if x.cols != p.feature_dim:
        raise ValueError(f"expected {p.feature_dim} features, got {x.cols}")
    h = ad.relu(ad.conv1d_temporal(x, p["att.conv0"], p["att.conv0.b"], block_len))
    h = ad.relu(ad.conv1d_temporal(h, p["att.conv1"], p["att.conv1.b"], block_len))
    h = ad.conv1d_temporal(h, p["att.conv2"], p["att.conv2.b"], block_len)
    return ad.sigmoid(h)


def classifier_forward(x, p: ModelParams, block_len: int | None = None) -> Tensor2:
    """Per-segment class logits S, T x (C+1); no softmax applied here."""
    x = _as_input(x)
    if x.cols != p.feature_dim:
        raise ValueError(f"expected {p.feature_dim} features, got {x.cols}")
    h = ad.self_attention_residual(x, p["cls.attn.wq"], p["cls.attn.wk"],
                                   p["cls.attn.wv"], block_len)
    h = ad.relu(ad.conv1d_temporal(h, p["cls.conv0"], p["cls.conv0.b"], block_len))
    h = ad.relu(ad.conv1d_temporal(h, p["cls.conv1"], p["cls.conv1.b"], block_len))
    h = ad.relu(ad.conv1d_temporal(h, p["cls.conv2"], p["cls.conv2.b"], block_len))
    return ad.conv1d_temporal(h, p["cls.conv3"], p["cls.conv3.b"], block_len)


def tcam_forward(x, p: ModelParams, block_len: int | None = None) -> TCamPair:
    x = _as_input(x)
    a = attention_forward(x, p, block_len)
    s = classifier_forward(x, p, block_len)
    return TCamPair(s=s, a=a, s_bar=ad.mul(a, s))


def tcam_forward_np(x: np.ndarray, p: ModelParams,
                    block_len: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient-free forward returning plain (S, A, S_bar) arrays."""
    pair = tcam_forward(np.asarray(x, dtype=np.float64), p, block_len)
    return pair.s.data, pair.a.data, pair.s_bar.data


def tcam_forward_stack(xs: list, p: ModelParams) -> list:
    """Gradient-free forward of several equal-length videos in one pass;
    returns the per-video suppressed T-CAMs."""
    if not xs:
        return []
    t_len = xs[0].shape[0]
    stacked = np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=0)
    _, _, s_bar = tcam_forward_np(stacked, p, block_len=t_len)
    return [s_bar[i * t_len:(i + 1) * t_len] for i in range(len(xs))]


def save_params(p: ModelParams, path) -> None:
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<H", CHECKPOINT_VERSION)
    body += struct.pack("<III", p.feature_dim, p.hidden_dim, p.num_classes)
    body += struct.pack("<I", len(p.params))
    for name, t in p.params.items():
        ident = name.encode("utf-8")
        body += struct.pack("<H", len(ident))
        body += ident
        body += struct.pack("<II", t.rows, t.cols)
        body += t.data.astype("<f8").tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    body += struct.pack("<I", crc)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 2 + 4:
        raise CheckpointFormatError("truncated checkpoint")
    payload, tail = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", tail)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CheckpointFormatError("checksum failure")
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(payload):
            raise CheckpointFormatError("truncated checkpoint")
        out = payload[off:off + n]
        off += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic; not a checkpoint")
    (version,) = struct.unpack("<H", take(2))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    feature_dim, hidden_dim, num_classes = struct.unpack("<III", take(12))
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, Tensor2] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        name = take(id_len).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        data = np.frombuffer(take(rows * cols * 8), dtype="<f8").reshape(rows, cols)
        params[name] = Tensor2(data.copy(), requires_grad=True)
    return ModelParams(params, feature_dim, hidden_dim, num_classes)

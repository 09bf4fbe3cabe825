"""Minimal reverse-mode automatic differentiation over dense rank-2 float64 arrays.

Provides exactly the operator set the T-CAM networks and training losses
need: elementwise arithmetic with restricted broadcasting, matmul, "same"
padded temporal convolution, row softmax, top-k temporal pooling, and a
row-wise KL divergence.  Gradients are recorded on an explicit tape; ops
executed outside any active tape produce plain constants.

Batches of equal-length videos are processed as one (B*T) x F stack:
the temporal ops take a ``block_len`` so a whole batch costs one tape
node instead of one per video, with zero padding and pooling applied
per block.
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

_EPS_KL = 1e-8

_TLS = threading.local()


def _scratch(key: str, shape: tuple) -> np.ndarray:
    """Reusable per-thread work buffer.

    Valid only within a single op's forward or backward; never captured
    by closures (the heavy ops recompute intermediates in backward so
    each tape node retains only its output and parent references).
    """
    pool = getattr(_TLS, "pool", None)
    if pool is None:
        pool = _TLS.pool = {}
    buf = pool.get((key, shape))
    if buf is None:
        buf = pool[(key, shape)] = np.empty(shape)
    return buf


class AutodiffError(RuntimeError):
    pass


_ACTIVE_TAPE: Optional["Tape"] = None


def active_tape() -> Optional["Tape"]:
    return _ACTIVE_TAPE


class Tensor2:
    """A rank-2 float64 array, optionally tracked for gradients.

    1-D input is promoted to a single row; scalars to shape (1, 1).
    Non-finite values anywhere are rejected at construction, which makes
    every op boundary a finiteness checkpoint.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise AutodiffError(f"Tensor2 is rank-2 only, got ndim={arr.ndim}")
        # a single reduction flags any NaN/Inf; desk-scale sums cannot overflow
        if not np.isfinite(arr.sum()):
            raise AutodiffError("non-finite value in tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._tape: Optional[Tape] = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError("item() on non-scalar tensor")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor2":
        return Tensor2(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        """Add a gradient contribution; copies, so ``g`` may be a view."""
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def _accumulate_owned(self, g: np.ndarray) -> None:
        """Add a gradient contribution from a fresh array the caller
        relinquishes; avoids the defensive copy."""
        if self.grad is None and g.shape == self.data.shape:
            self.grad = g
        else:
            self._accumulate(g)

    def __repr__(self) -> str:
        return f"Tensor2(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Op recorder for one backward pass.

    Nodes are appended in execution order, so every parent precedes its
    child and a single reverse sweep visits each node exactly once.
    A tape can run backward() only once; reset() re-arms it.
    """

    def __init__(self):
        self._nodes: list[Tensor2] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise AutodiffError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def _record(self, out: Tensor2) -> None:
        out._tape = self
        self._nodes.append(out)

    def backward(self, loss: Tensor2) -> None:
        if self._consumed:
            raise AutodiffError("tape already consumed; reset() before reusing")
        if loss.data.shape != (1, 1):
            raise AutodiffError(f"backward root must be scalar, got {loss.data.shape}")
        if loss._tape is not self:
            raise AutodiffError("loss is not recorded on this tape (detached graph)")
        self._consumed = True
        loss._accumulate(np.ones((1, 1)))
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)

    def reset(self) -> None:
        for node in self._nodes:
            node.grad = None
            node._tape = None
            node._parents = ()
            node._backward = None
        self._nodes.clear()
        self._consumed = False


def backward(loss: Tensor2) -> None:
    """Run the backward pass of the tape that recorded ``loss``."""
    if loss._tape is None:
        raise AutodiffError("loss is not attached to any tape")
    loss._tape.backward(loss)


def _as_tensor(x) -> Tensor2:
    return x if isinstance(x, Tensor2) else Tensor2(x)


def _make(out_data: np.ndarray, parents: Sequence[Tensor2],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor2:
    """Wrap an op result; record it when a tape is active and grads flow."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor2(out_data, requires_grad=needs)
    if _ACTIVE_TAPE is not None and needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
        _ACTIVE_TAPE._record(out)
    return out


def _blocks(total_rows: int, block_len: int | None) -> int:
    if block_len is None:
        return 1
    if block_len < 1 or total_rows % block_len != 0:
        raise AutodiffError(f"{total_rows} rows do not split into blocks of {block_len}")
    return total_rows // block_len


_BROADCAST_MSG = "shapes {} and {} are not broadcast-compatible (same, (1,1), row or column vector only)"


def _check_broadcast(a: Tensor2, b: Tensor2) -> None:
    ra, ca = a.shape
    rb, cb = b.shape
    if (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1):
        return
    raise AutodiffError(_BROADCAST_MSG.format(a.shape, b.shape))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def add(a, b) -> Tensor2:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def back(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor2:
    return add(a, scale(_as_tensor(b), -1.0))


def mul(a, b) -> Tensor2:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def back(g):
        a._accumulate_owned(_unbroadcast(g * b.data, a.shape))
        b._accumulate_owned(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor2:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def back(g):
        a._accumulate_owned(_unbroadcast(g / b.data, a.shape))
        b._accumulate_owned(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    with np.errstate(divide="ignore", invalid="ignore"):
        return _make(a.data / b.data, (a, b), back)


def scale(a, c: float) -> Tensor2:
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        a._accumulate_owned(g * c)

    return _make(a.data * c, (a,), back)


def add_const(a, c: float) -> Tensor2:
    a = _as_tensor(a)

    def back(g):
        a._accumulate(g)

    return _make(a.data + float(c), (a,), back)


def neg(a) -> Tensor2:
    return scale(a, -1.0)


def matmul(a, b) -> Tensor2:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise AutodiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        a._accumulate_owned(g @ b.data.T)
        b._accumulate_owned(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


def transpose(a) -> Tensor2:
    a = _as_tensor(a)

    def back(g):
        a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), back)


def relu(a) -> Tensor2:
    a = _as_tensor(a)

    def back(g):
        a._accumulate_owned(g * (a.data > 0))

    return _make(np.maximum(a.data, 0.0), (a,), back)


def sigmoid(a) -> Tensor2:
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        a._accumulate_owned(g * s * (1.0 - s))

    return _make(s, (a,), back)


def exp(a) -> Tensor2:
    a = _as_tensor(a)
    e = np.exp(a.data)

    def back(g):
        a._accumulate_owned(g * e)

    return _make(e, (a,), back)


def log(a) -> Tensor2:
    a = _as_tensor(a)

    def back(g):
        a._accumulate_owned(g / a.data)

    # the constructor inside _make rejects the -inf/nan from invalid input
    with np.errstate(divide="ignore", invalid="ignore"):
        return _make(np.log(a.data), (a,), back)


def sqrt(a) -> Tensor2:
    a = _as_tensor(a)
    r = np.sqrt(a.data)

    def back(g):
        a._accumulate_owned(g * 0.5 / r)

    return _make(r, (a,), back)


def absolute(a) -> Tensor2:
    a = _as_tensor(a)
    sgn = np.sign(a.data)

    def back(g):
        a._accumulate_owned(g * sgn)

    return _make(np.abs(a.data), (a,), back)


def total(a) -> Tensor2:
    """Sum of all entries, as a 1x1 scalar."""
    a = _as_tensor(a)

    def back(g):
        a._accumulate_owned(np.full(a.shape, g[0, 0]))

    return _make(np.array([[a.data.sum()]]), (a,), back)


def mean(a) -> Tensor2:
    """Mean of all entries, as a 1x1 scalar."""
    a = _as_tensor(a)
    n = a.data.size

    def back(g):
        a._accumulate_owned(np.full(a.shape, g[0, 0] / n))

    return _make(np.array([[a.data.sum() / n]]), (a,), back)


def sum_rows(a) -> Tensor2:
    """Per-row sum, shape R x 1."""
    a = _as_tensor(a)

    def back(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=1, keepdims=True), (a,), back)


def slice_col(a, j: int) -> Tensor2:
    a = _as_tensor(a)
    if not (0 <= j < a.cols):
        raise AutodiffError(f"column {j} out of range for shape {a.shape}")

    def back(g):
        ga = np.zeros(a.shape)
        ga[:, j] = g[:, 0]
        a._accumulate_owned(ga)

    return _make(a.data[:, j:j + 1].copy(), (a,), back)


def gather_rows(a, idx) -> Tensor2:
    """Select rows by index (duplicates allowed); gradients scatter-add."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx, g)
        a._accumulate_owned(ga)

    return _make(a.data[idx], (a,), back)


def gather_block_columns(a, block_ids, col_ids, block_len: int) -> Tensor2:
    """Row m of the output is column col_ids[m] of block block_ids[m],
    transposed to a length-T row.  Used to pull per-(video, class) score
    columns out of a stacked batch in one op."""
    a = _as_tensor(a)
    block_ids = np.asarray(block_ids, dtype=np.int64)
    col_ids = np.asarray(col_ids, dtype=np.int64)
    n_blocks = _blocks(a.rows, block_len)
    if len(block_ids) != len(col_ids):
        raise AutodiffError("block_ids and col_ids must have equal length")
    if block_ids.size and (block_ids.min() < 0 or block_ids.max() >= n_blocks):
        raise AutodiffError("block id out of range")
    a3 = a.data.reshape(n_blocks, block_len, a.cols)
    out = a3[block_ids, :, col_ids]

    def back(g):
        ga = np.zeros_like(a3)
        np.add.at(ga, (block_ids[:, None], np.arange(block_len)[None, :],
                       col_ids[:, None]), g)
        a._accumulate_owned(ga.reshape(a.shape))

    return _make(out, (a,), back)


def rows_matmul_blocks(w, x, block_ids, block_len: int) -> Tensor2:
    """out[m] = w[m] @ block block_ids[m] of the constant stack ``x``.

    ``w`` is M x T weights; ``x`` is (B*T) x F and must not require
    gradient (it holds raw input features)."""
    w, x = _as_tensor(w), _as_tensor(x)
    if x.requires_grad:
        raise AutodiffError("rows_matmul_blocks treats x as constant features")
    block_ids = np.asarray(block_ids, dtype=np.int64)
    n_blocks = _blocks(x.rows, block_len)
    if w.cols != block_len:
        raise AutodiffError(f"weights have {w.cols} columns, blocks are {block_len}")
    if block_ids.size and (block_ids.min() < 0 or block_ids.max() >= n_blocks):
        raise AutodiffError("block id out of range")
    x3 = x.data.reshape(n_blocks, block_len, x.cols)
    xg = x3[block_ids]
    out = np.einsum("mt,mtf->mf", w.data, xg)

    def back(g):
        w._accumulate_owned(np.einsum("mf,mtf->mt", g, xg))

    return _make(out, (w, x), back)


def softmax_rows(a) -> Tensor2:
    """Row-wise softmax with internal max-subtraction (shift-invariant)."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        a._accumulate_owned(s * (g - dot))

    return _make(s, (a,), back)


def conv1d_temporal(x, w, b, block_len: int | None = None) -> Tensor2:
    """Temporal convolution with "same" zero padding.

    ``x`` is T x Fin; ``w`` packs a width-k kernel as a (k*Fin) x Fout
    matrix with row index delta*Fin + i; ``b`` is 1 x Fout.  The kernel
    width k = w.rows / Fin must be odd.  out[t, o] = b[o] +
    sum_{delta,i} w[delta*Fin+i, o] * x[t + delta - (k-1)/2, i] with
    zeros outside [0, T).  With ``block_len``, rows are independent
    videos of that length stacked on axis 0 and padding applies per
    video.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    rows, fin = x.shape
    n_blocks = _blocks(rows, block_len)
    t_len = rows // n_blocks
    if w.rows % fin != 0:
        raise AutodiffError(f"kernel rows {w.rows} not a multiple of input width {fin}")
    k = w.rows // fin
    if k < 1 or k % 2 == 0:
        raise AutodiffError(f"kernel width must be odd and >= 1, got {k}")
    if b.shape != (1, w.cols):
        raise AutodiffError(f"bias shape {b.shape} does not match {w.cols} outputs")
    pad = (k - 1) // 2

    def im2col() -> np.ndarray:
        xp = _scratch("conv_xp", (n_blocks, t_len + 2 * pad, fin))
        if pad:
            xp[:, :pad] = 0.0
            xp[:, pad + t_len:] = 0.0
        xp[:, pad:pad + t_len] = x.data.reshape(n_blocks, t_len, fin)
        cols = _scratch("conv_cols", (n_blocks, t_len, k * fin))
        for d in range(k):
            cols[:, :, d * fin:(d + 1) * fin] = xp[:, d:d + t_len]
        return cols.reshape(rows, k * fin)

    def back(g):
        cols2 = im2col()
        w._accumulate_owned(cols2.T @ g)
        b._accumulate_owned(g.sum(axis=0, keepdims=True))
        gcols = np.matmul(g, w.data.T,
                          out=_scratch("conv_gcols", (rows, k * fin)))
        gcols3 = gcols.reshape(n_blocks, t_len, k * fin)
        gxp = _scratch("conv_gxp", (n_blocks, t_len + 2 * pad, fin))
        gxp[:] = 0.0
        for d in range(k):
            gxp[:, d:d + t_len] += gcols3[:, :, d * fin:(d + 1) * fin]
        x._accumulate(gxp[:, pad:pad + t_len].reshape(rows, fin))

    out = im2col() @ w.data
    out += b.data
    return _make(out, (x, w, b), back)


def self_attention_residual(x, wq, wk, wv, block_len: int | None = None) -> Tensor2:
    """Single-head scaled dot-product self-attention over time with a
    residual connection: out = x + softmax(x Wq (x Wk)^T / sqrt(F)) x Wv,
    applied independently per block."""
    x, wq, wk, wv = _as_tensor(x), _as_tensor(wq), _as_tensor(wk), _as_tensor(wv)
    rows, f_dim = x.shape
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv)):
        if w.shape != (f_dim, f_dim):
            raise AutodiffError(f"{name} must be {f_dim}x{f_dim}, got {w.shape}")
    n_blocks = _blocks(rows, block_len)
    t_len = rows // n_blocks
    alpha = 1.0 / np.sqrt(f_dim)

    def pieces():
        """q, k, v projections and the attention matrix, in scratch;
        recomputed for backward so the node captures nothing heavy."""
        xb = x.data.reshape(n_blocks, t_len, f_dim)
        q = np.matmul(xb, wq.data, out=_scratch("attn_q", (n_blocks, t_len, f_dim)))
        kk = np.matmul(xb, wk.data, out=_scratch("attn_k", (n_blocks, t_len, f_dim)))
        v = np.matmul(xb, wv.data, out=_scratch("attn_v", (n_blocks, t_len, f_dim)))
        p = np.matmul(q, kk.transpose(0, 2, 1),
                      out=_scratch("attn_p", (n_blocks, t_len, t_len)))
        p *= alpha
        p -= p.max(axis=2, keepdims=True)
        np.exp(p, out=p)
        p /= p.sum(axis=2, keepdims=True)
        return xb, q, kk, v, p

    def back(g):
        xb, q, kk, v, p = pieces()
        gy = g.reshape(n_blocks, t_len, f_dim)
        gv = np.matmul(p.transpose(0, 2, 1), gy,
                       out=_scratch("attn_gv", (n_blocks, t_len, f_dim)))
        gp = np.matmul(gy, v.transpose(0, 2, 1),
                       out=_scratch("attn_gp", (n_blocks, t_len, t_len)))
        gs = p
        gs *= gp - (gp * p).sum(axis=2, keepdims=True)
        gq = np.matmul(gs, kk, out=_scratch("attn_gq", (n_blocks, t_len, f_dim)))
        gq *= alpha
        gk = np.matmul(gs.transpose(0, 2, 1), q,
                       out=_scratch("attn_gk", (n_blocks, t_len, f_dim)))
        gk *= alpha
        gx = _scratch("attn_gx", (n_blocks, t_len, f_dim))
        np.matmul(gq, wq.data.T, out=gx)
        gx += gy
        gx += np.matmul(gk, wk.data.T)
        gx += np.matmul(gv, wv.data.T)
        x._accumulate(gx.reshape(rows, f_dim))
        xt = xb.transpose(0, 2, 1)
        wq._accumulate_owned(np.matmul(xt, gq).sum(axis=0))
        wk._accumulate_owned(np.matmul(xt, gk).sum(axis=0))
        wv._accumulate_owned(np.matmul(xt, gv).sum(axis=0))

    xb, q, kk, v, p = pieces()
    out = np.matmul(p, v)
    out += xb
    return _make(out.reshape(rows, f_dim), (x, wq, wk, wv), back)


def topk_mean_time(scores, k: int, block_len: int | None = None) -> Tensor2:
    """Per-column mean of the k largest entries, one output row per block.

    Gradient 1/k flows to exactly the selected entries; ties at the cut
    resolve to the lowest temporal index so routing is deterministic.
    """
    scores = _as_tensor(scores)
    rows, n_cols = scores.shape
    n_blocks = _blocks(rows, block_len)
    t_len = rows // n_blocks
    if not (1 <= k <= t_len):
        raise AutodiffError(f"k={k} out of range for {t_len} time steps")
    s3 = scores.data.reshape(n_blocks, t_len, n_cols)
    # stable argsort of -column keeps the lowest index first among ties
    order = np.argsort(-s3, axis=1, kind="stable")
    sel = order[:, :k, :]
    picked = np.take_along_axis(s3, sel, axis=1)
    out = picked.mean(axis=1)

    def back(g):
        gs = np.zeros_like(s3)
        np.put_along_axis(gs, sel, np.broadcast_to(g[:, None, :] / k,
                                                   sel.shape), axis=1)
        scores._accumulate_owned(gs.reshape(rows, n_cols))

    return _make(out, (scores,), back)


def kl_rows(p, q) -> Tensor2:
    """Mean over rows of KL(p_row || q_row).

    ``p`` is the target and never receives gradient (mean-teacher
    semantics); ``q`` is the prediction.  Both must be row-stochastic to
    within 1e-6.  Log arguments are floored at 1e-8, so kl_rows(p, p) is
    exactly zero and the result is always >= 0 up to the floor.
    """
    p, q = _as_tensor(p), _as_tensor(q)
    if p.shape != q.shape:
        raise AutodiffError(f"shape mismatch: {p.shape} vs {q.shape}")
    for name, t in (("p", p), ("q", q)):
        sums = t.data.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise AutodiffError(f"{name} rows are not normalized (max |sum-1| = "
                                f"{np.abs(sums - 1.0).max():.3g})")
        if t.data.min() < -1e-12:
            raise AutodiffError(f"{name} has negative entries")
    t_len = p.rows
    pc = np.maximum(p.data, _EPS_KL)
    qc = np.maximum(q.data, _EPS_KL)
    val = (p.data * (np.log(pc) - np.log(qc))).sum() / t_len

    def back(g):
        gq = np.where(q.data > _EPS_KL, -p.data / qc, 0.0) * (g[0, 0] / t_len)
        q._accumulate_owned(gq)

    return _make(np.array([[val]]), (q,), back)

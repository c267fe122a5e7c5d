"""Differentiable primitives: linear algebra, convs, norms, losses.

Shapes follow a channels-first convention for sequence convs: x is (C, T),
weights are (C_out, C_in, K) for conv1d and conv_transpose1d alike.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from genvc.errors import DimensionError, IndexRangeError
from genvc.numerics.tensor import Tensor, _rec, _unbroadcast

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    """a @ b with leading batch dims broadcast numpy-style."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data
    out_data = a_data @ b_data
    parents = []
    if _rec(a):
        parents.append(
            (a, lambda g: _unbroadcast(g @ b_data.swapaxes(-1, -2), a_data.shape))
        )
    if _rec(b):
        parents.append(
            (b, lambda g: _unbroadcast(a_data.swapaxes(-1, -2) @ g, b_data.shape))
        )
    return Tensor(out_data, parents=tuple(parents))


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """1-d correlation of x (C_in, T) with w (C_out, C_in, K) -> (C_out, T').

    T' = floor((T + 2*padding - ((K-1)*dilation + 1)) / stride) + 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 2 or w.ndim != 3:
        raise DimensionError(f"conv1d expects (C,T) and (C_out,C_in,K), got {x.shape}, {w.shape}")
    c_in, t = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv1d channels disagree: input {c_in}, weight {c_in_w}")
    span = (k - 1) * dilation + 1
    t_out = (t + 2 * padding - span) // stride + 1
    if t_out < 1:
        raise DimensionError(f"conv1d output empty: T={t}, kernel span {span}, padding {padding}")
    x_data, w_data = x.data, w.data
    x_pad = np.pad(x_data, ((0, 0), (padding, padding))) if padding else x_data
    out_data = np.zeros((c_out, t_out), dtype=x_data.dtype)
    hi = (t_out - 1) * stride + 1
    for tap in range(k):
        out_data += w_data[:, :, tap] @ x_pad[:, tap * dilation : tap * dilation + hi : stride]
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data[:, None]
    parents = []
    if _rec(x):

        def pull_x(g):
            gx_pad = np.zeros_like(x_pad)
            for tap in range(k):
                gx_pad[:, tap * dilation : tap * dilation + hi : stride] += (
                    w_data[:, :, tap].T @ g
                )
            return gx_pad[:, padding : padding + t] if padding else gx_pad

        parents.append((x, pull_x))
    if _rec(w):

        def pull_w(g):
            gw = np.zeros_like(w_data)
            for tap in range(k):
                gw[:, :, tap] = g @ x_pad[:, tap * dilation : tap * dilation + hi : stride].T
            return gw

        parents.append((w, pull_w))
    if b is not None and _rec(b):
        parents.append((b, lambda g: g.sum(axis=1)))
    return Tensor(out_data, parents=tuple(parents))


def conv_transpose1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 1-d conv of x (C_in, T) with w (C_out, C_in, K).

    Output length is (T-1)*stride - 2*padding + K.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 2 or w.ndim != 3:
        raise DimensionError(
            f"conv_transpose1d expects (C,T) and (C_out,C_in,K), got {x.shape}, {w.shape}"
        )
    c_in, t = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv_transpose1d channels disagree: input {c_in}, weight {c_in_w}")
    t_full = (t - 1) * stride + k
    t_out = t_full - 2 * padding
    if t_out < 1:
        raise DimensionError(f"conv_transpose1d output empty: T={t}, kernel {k}, padding {padding}")
    x_data, w_data = x.data, w.data
    full = np.zeros((c_out, t_full), dtype=x_data.dtype)
    hi = (t - 1) * stride + 1
    for tap in range(k):
        full[:, tap : tap + hi : stride] += w_data[:, :, tap] @ x_data
    out_data = full[:, padding : padding + t_out]
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data[:, None]
    parents = []
    if _rec(x) or _rec(w):

        def g_full_of(g):
            gf = np.zeros((c_out, t_full), dtype=g.dtype)
            gf[:, padding : padding + t_out] = g
            return gf

        if _rec(x):

            def pull_x(g):
                gf = g_full_of(g)
                gx = np.zeros_like(x_data)
                for tap in range(k):
                    gx += w_data[:, :, tap].T @ gf[:, tap : tap + hi : stride]
                return gx

            parents.append((x, pull_x))
        if _rec(w):

            def pull_w(g):
                gf = g_full_of(g)
                gw = np.zeros_like(w_data)
                for tap in range(k):
                    gw[:, :, tap] = gf[:, tap : tap + hi : stride] @ x_data.T
                return gw

            parents.append((w, pull_w))
    if b is not None and _rec(b):
        parents.append((b, lambda g: g.sum(axis=1)))
    return Tensor(out_data, parents=tuple(parents))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gain.shape}/{bias.shape} want ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data
    parents = []
    if _rec(x):
        g_data = gain.data

        def pull_x(g):
            gy = g * g_data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            return inv * (gy - m1 - xhat * m2)

        parents.append((x, pull_x))
    if _rec(gain):
        parents.append((gain, lambda g: (g * xhat).reshape(-1, d).sum(axis=0)))
    if _rec(bias):
        parents.append((bias, lambda g: g.reshape(-1, d).sum(axis=0)))
    return Tensor(out_data, parents=tuple(parents))


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup: table (V, D) indexed by integer ids (N,) -> (N, D)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise DimensionError(f"embedding ids must be 1-d, got shape {ids.shape}")
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexRangeError(f"embedding id out of range [0, {v})")
    out_data = table.data[ids]
    parents = ()
    if _rec(table):

        def pull(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            return gt

        parents = ((table, pull),)
    return Tensor(out_data, parents=parents)


def softmax(x, axis: int = -1) -> Tensor:
    """Masked-friendly softmax; -inf entries get exactly zero weight."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    parents = ()
    if _rec(x):
        parents = ((x, lambda g: s * (g - (g * s).sum(axis=axis, keepdims=True))),)
    return Tensor(s, parents=parents)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    parents = ()
    if _rec(x):
        s = np.exp(out_data)
        parents = ((x, lambda g: g - s * g.sum(axis=axis, keepdims=True)),)
    return Tensor(out_data, parents=parents)


def softmax_xent(logits, target: int) -> Tensor:
    """Cross-entropy of a single (V,) logit row against an integer class."""
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise DimensionError(f"softmax_xent expects (V,), got {logits.shape}")
    v = logits.shape[0]
    target = int(target)
    if not 0 <= target < v:
        raise IndexRangeError(f"target {target} outside [0, {v})")
    lp = log_softmax(logits)
    return -lp[target]


def cross_entropy_rows(logits, targets: np.ndarray) -> Tensor:
    """Mean NLL of logits (T, V) against integer targets (T,)."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
        raise DimensionError(f"cross_entropy_rows shapes disagree: {logits.shape}, {targets.shape}")
    t, v = logits.shape
    if t == 0:
        raise DimensionError("cross_entropy_rows needs at least one row")
    if targets.min() < 0 or targets.max() >= v:
        raise IndexRangeError(f"target outside [0, {v})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(t)
    out_data = np.asarray(-logp[rows, targets].mean(), dtype=logits.dtype)
    parents = ()
    if _rec(logits):
        probs = np.exp(logp)

        def pull(g):
            gl = probs.copy()
            gl[rows, targets] -= 1.0
            return gl * (g / t)

        parents = ((logits, pull),)
    return Tensor(out_data, parents=parents)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    parents = ((x, lambda g: g * mask),) if _rec(x) else ()
    return Tensor(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), parents=parents)


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    scale = np.where(mask, np.asarray(1.0, x.dtype), np.asarray(slope, x.dtype))
    parents = ((x, lambda g: g * scale),) if _rec(x) else ()
    return Tensor(x.data * scale, parents=parents)


def gelu(x) -> Tensor:
    """Exact Gaussian-error-linear unit, 0.5 x (1 + erf(x / sqrt(2)))."""
    x = _as_tensor(x)
    x_data = x.data
    phi = 0.5 * (1.0 + erf(x_data * _INV_SQRT2))
    out_data = (x_data * phi).astype(x.dtype, copy=False)
    parents = ()
    if _rec(x):
        pdf = np.exp(-0.5 * x_data * x_data) * _INV_SQRT2PI
        parents = ((x, lambda g: g * (phi + x_data * pdf)),)
    return Tensor(out_data, parents=parents)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    parents = ((x, lambda g: g * (1.0 - t * t)),) if _rec(x) else ()
    return Tensor(t, parents=parents)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    e = np.exp(x.data)
    parents = ((x, lambda g: g * e),) if _rec(x) else ()
    return Tensor(e, parents=parents)


def log(x) -> Tensor:
    x = _as_tensor(x)
    parents = ((x, lambda g: g / x.data),) if _rec(x) else ()
    return Tensor(np.log(x.data), parents=parents)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    r = np.sqrt(x.data)
    parents = ((x, lambda g: g * 0.5 / r),) if _rec(x) else ()
    return Tensor(r, parents=parents)


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    s = np.sign(x.data)
    parents = ((x, lambda g: g * s),) if _rec(x) else ()
    return Tensor(np.abs(x.data), parents=parents)


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient is blocked where the floor is active."""
    x = _as_tensor(x)
    mask = x.data > floor
    out_data = np.where(mask, x.data, np.asarray(floor, x.dtype))
    parents = ((x, lambda g: g * mask),) if _rec(x) else ()
    return Tensor(out_data, parents=parents)


def frame_signal(x, window: int, hop: int) -> Tensor:
    """Slice a 1-d signal into (F, window) frames at the given hop."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise DimensionError(f"frame_signal expects 1-d input, got {x.shape}")
    n = x.shape[0]
    if n < window:
        raise DimensionError(f"frame_signal: signal length {n} shorter than window {window}")
    f = 1 + (n - window) // hop
    idx = hop * np.arange(f)[:, None] + np.arange(window)[None, :]
    out_data = x.data[idx]
    parents = ()
    if _rec(x):

        def pull(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            return gx

        parents = ((x, pull),)
    return Tensor(out_data, parents=parents)


def attention(q, k, v, n_heads: int, mask: np.ndarray | None = None, attn_sink=None) -> Tensor:
    """Scaled dot-product attention over pre-projected (T, inner) tensors.

    inner must be n_heads * head_dim; mask, if given, is an additive
    (T_q, T_k) array broadcast over heads. attn_sink, if a list, receives a
    copy of the (n_heads, T_q, T_k) weight array.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    t_q, inner = q.shape
    t_k = k.shape[0]
    if inner % n_heads:
        raise DimensionError(f"attention inner dim {inner} not divisible by {n_heads} heads")
    if k.shape != (t_k, inner) or v.shape != (t_k, inner):
        raise DimensionError(f"attention k/v shapes {k.shape}/{v.shape} want ({t_k}, {inner})")
    d_head = inner // n_heads
    qh = q.reshape(t_q, n_heads, d_head).transpose(1, 0, 2)
    kh = k.reshape(t_k, n_heads, d_head).transpose(1, 2, 0)
    vh = v.reshape(t_k, n_heads, d_head).transpose(1, 0, 2)
    scores = matmul(qh, kh) * float(1.0 / np.sqrt(d_head))
    if mask is not None:
        scores = scores + Tensor(mask[None, :, :])
    weights = softmax(scores, axis=-1)
    if attn_sink is not None:
        attn_sink.append(weights.data.copy())
    ctx = matmul(weights, vh)
    return ctx.transpose(1, 0, 2).reshape(t_q, inner)

"""Neural-network primitives on :class:`~vimd.tensor.Tensor`.

Each primitive is fused (one tape node, hand-written backward) so the
Python overhead per training step stays proportional to the layer count.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DomainError, ShapeError
from .tensor import Tensor, make_op

RMS_EPS = 1e-5


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_op("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    """``x * sigmoid(x)``."""
    xd = x.data
    s = _sigmoid(xd)
    return make_op("silu", xd * s, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    return make_op("softplus", out, (x,), lambda g: (g * _sigmoid(xd),))


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise DomainError(f"softmax temperature must be > 0, got {temperature}")


def softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Tempered softmax ``softmax(x / temperature)`` along ``axis``."""
    _check_temperature(temperature)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return ((y * (g - (g * y).sum(axis=axis, keepdims=True))) / temperature,)

    return make_op("softmax", y, (x,), fn)


def log_softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Tempered log-softmax, evaluated through log-sum-exp."""
    _check_temperature(temperature)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def fn(g):
        p = np.exp(out)
        return ((g - p * g.sum(axis=axis, keepdims=True)) / temperature,)

    return make_op("log_softmax", out, (x,), fn)


def rms_norm(x: Tensor, gain: Tensor, eps: float = RMS_EPS) -> Tensor:
    """``x / sqrt(mean(x**2) + eps) * gain`` over the last axis."""
    if x.shape[-1] != gain.shape[-1] or gain.ndim != 1:
        raise ShapeError(f"rms_norm gain has shape {gain.shape}, expected ({x.shape[-1]},)")
    xd, gd = x.data, gain.data
    r = 1.0 / np.sqrt(np.mean(xd * xd, axis=-1, keepdims=True) + eps)
    xhat = xd * r

    def fn(g):
        gx = gg = None
        if x.requires_grad:
            gy = g * gd
            gx = r * (gy - xhat * np.mean(gy * xhat, axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, gd.shape[0]).sum(axis=0)
        return gx, gg

    return make_op("rms_norm", xhat * gd, (x, gain), fn)


def reverse_seq(x: Tensor) -> Tensor:
    """Reverse token order; tokens live on axis -2 (``[..., T, E]``)."""
    if x.ndim < 2:
        raise ShapeError(f"reverse_seq needs a token-major [T, E] tensor, got shape {x.shape}")
    out = np.ascontiguousarray(x.data[..., ::-1, :])
    return make_op("reverse_seq", out, (x,), lambda g: (np.ascontiguousarray(g[..., ::-1, :]),))


# ---------------------------------------------------------------------------
# convolutions


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of ``[B,C,H,W]`` (or ``[C,H,W]``) with ``[D,C,J,J]``."""
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    wd = weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] or [B,C,H,W] input and [D,C,J,J] kernel, got {x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise DomainError(f"conv2d needs stride >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    B, C, H, W = xd.shape
    D, Ck, KH, KW = wd.shape
    if C != Ck:
        raise ShapeError(f"conv2d input has {C} channels but kernel expects {Ck}")
    if H + 2 * padding < KH or W + 2 * padding < KW:
        raise ShapeError(f"conv2d kernel {KH}x{KW} is larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    Ho, Wo = _conv_out(H, KH, stride, padding), _conv_out(W, KW, stride, padding)
    patchify = padding == 0 and stride == KH == KW and H % KH == 0 and W % KW == 0

    if patchify:
        # non-overlapping patches: one reshape and one GEMM
        cols = xd.reshape(B, C, Ho, KH, Wo, KW).transpose(0, 2, 4, 1, 3, 5).reshape(B * Ho * Wo, C * KH * KW)
        out = (cols @ wd.reshape(D, -1).T).reshape(B, Ho, Wo, D).transpose(0, 3, 1, 2)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        win = sliding_window_view(xp, (KH, KW), axis=(2, 3))[:, :, ::stride, ::stride]
        win = win[:, :, :Ho, :Wo]
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, D, 1, 1)
    out = np.ascontiguousarray(out)

    def fn(g):
        gx = gw = gb = None
        if unbatched:
            g = g[None]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if patchify:
            g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, D)
            if weight.requires_grad:
                gw = (g2.T @ cols).reshape(wd.shape)
            if x.requires_grad:
                gcols = g2 @ wd.reshape(D, -1)
                gx = gcols.reshape(B, Ho, Wo, C, KH, KW).transpose(0, 3, 1, 4, 2, 5).reshape(B, C, H, W)
        else:
            if weight.requires_grad:
                gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            if x.requires_grad:
                gxp = np.zeros(xp.shape, dtype=np.result_type(g, wd))
                for i in range(KH):
                    for j in range(KW):
                        contrib = np.tensordot(g, wd[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                        gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += contrib
                gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        if gx is not None and unbatched:
            gx = gx[0]
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("conv2d", out[0] if unbatched else out, inputs, fn)


def causal_conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Depthwise causal convolution over tokens.

    ``x`` is ``[..., T, E]``, ``weight`` is ``[E, K]``; output token ``t`` sees
    inputs ``t-K+1 .. t`` (left zero padding of ``K-1``).
    """
    xd, wd = x.data, weight.data
    E, K = wd.shape
    if xd.shape[-1] != E:
        raise ShapeError(f"causal_conv1d kernel has {E} channels, input has {xd.shape[-1]}")
    T = xd.shape[-2]
    pad = [(0, 0)] * (xd.ndim - 2) + [(K - 1, 0), (0, 0)]
    xp = np.pad(xd, pad)
    dtype = np.result_type(xd, wd) if bias is None else np.result_type(xd, wd, bias.data)
    out = np.zeros(xd.shape, dtype=dtype)
    if bias is not None:
        out += bias.data
    for k in range(K):
        out += xp[..., k : k + T, :] * wd[:, k]

    def fn(g):
        gx = gw = gb = None
        if x.requires_grad:
            gp = np.zeros(xp.shape, dtype=np.result_type(g, wd))
            for k in range(K):
                gp[..., k : k + T, :] += g * wd[:, k]
            gx = gp[..., K - 1 :, :]
        if weight.requires_grad:
            g2 = g.reshape(-1, T, E)
            xp2 = xp.reshape(-1, T + K - 1, E)
            gw = np.stack([(g2 * xp2[:, k : k + T, :]).sum(axis=(0, 1)) for k in range(K)], axis=1)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, E).sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("causal_conv1d", out, inputs, fn)


# ---------------------------------------------------------------------------
# depth <-> space


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    B, Cr, H, W = a.shape
    C = Cr // (r * r)
    return a.reshape(B, C, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * r, W * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    B, C, Hr, Wr = a.shape
    H, W = Hr // r, Wr // r
    return a.reshape(B, C, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, H, W)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: ``[r²C, H, W] -> [C, rH, rW]`` (optionally batched)."""
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or r < 1 or xd.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle needs channels divisible by r²={r * r}, got shape {x.shape}")
    out = _shuffle(xd, r)

    def fn(g):
        gx = _unshuffle(g[None] if unbatched else g, r)
        return (gx[0] if unbatched else gx,)

    return make_op("pixel_shuffle", out[0] if unbatched else out, (x,), fn)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or r < 1 or xd.shape[2] % r or xd.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle needs spatial dims divisible by r={r}, got shape {x.shape}")
    out = _unshuffle(xd, r)

    def fn(g):
        gx = _shuffle(g[None] if unbatched else g, r)
        return (gx[0] if unbatched else gx,)

    return make_op("pixel_unshuffle", out[0] if unbatched else out, (x,), fn)

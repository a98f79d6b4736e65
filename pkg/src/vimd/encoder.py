"""Bidirectional selective-scan (Mamba) encoder block."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .exceptions import DomainError, ShapeError
from .ops import causal_conv1d, reverse_seq, rms_norm, silu, softplus
from .tensor import Tensor, is_grad_enabled, make_op

try:
    from . import _scan_kernels as _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

EXP_CLAMP = 30.0
SCAN_BACKEND = os.environ.get("VIMD_SCAN_BACKEND", "numba" if _kernels is not None else "numpy")


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D_skip: Tensor,
                   backend: Optional[str] = None) -> Tensor:
    """Input-dependent linear recurrence, one state vector per channel.

    Shapes (leading batch axis optional): ``u, delta: [T, E]``, ``A: [E, S]``,
    ``B, C: [T, S]``, ``D_skip: [E]``.  For every channel ``e``::

        h_t = exp(delta[t,e] * A[e]) * h_{t-1} + delta[t,e] * B[t] * u[t,e]
        y[t,e] = <C[t], h_t> + D_skip[e] * u[t,e]

    with ``h_0 = 0``.  ``backend`` picks the compiled loop (``"numba"``) or the
    vectorised numpy path; both are checked against a naive recurrence.
    """
    unbatched = u.ndim == 2
    ud, dd, Ad, Bd, Cd, Dd = (t.data for t in (u, delta, A, B, C, D_skip))
    if unbatched:
        ud, dd, Bd, Cd = ud[None], dd[None], Bd[None], Cd[None]
    if ud.ndim != 3 or dd.shape != ud.shape:
        raise ShapeError(f"selective_scan: u {u.shape} and delta {delta.shape} must both be [T, E] (optionally batched)")
    nb, nt, ne = ud.shape
    if Ad.shape[0] != ne or Ad.ndim != 2:
        raise ShapeError(f"selective_scan: A has shape {A.shape}, expected ({ne}, S)")
    ns = Ad.shape[1]
    if Bd.shape != (nb, nt, ns) or Cd.shape != (nb, nt, ns):
        raise ShapeError(f"selective_scan: B {B.shape} and C {C.shape} must be [T, {ns}]")
    if Dd.shape != (ne,):
        raise ShapeError(f"selective_scan: D_skip has shape {D_skip.shape}, expected ({ne},)")
    if nt < 1:
        raise ShapeError("selective_scan needs at least one token")
    if not np.all(dd > 0):
        raise DomainError("selective_scan: delta must be strictly positive")

    dtype = np.result_type(ud, dd, Ad, Bd, Cd, Dd)
    args = [np.ascontiguousarray(a, dtype=dtype) for a in (ud, dd, Ad, Bd, Cd, Dd)]
    store = is_grad_enabled() and any(t.requires_grad for t in (u, delta, A, B, C, D_skip))
    if (backend or SCAN_BACKEND) == "numba":
        ud, dd, Ad, Bd, Cd, Dd = args
        z = dd[..., None] * Ad
        decay = np.exp(np.clip(z, -EXP_CLAMP, EXP_CLAMP))
        hs = np.empty(decay.shape if store else (1, 1, 1, 1), dtype=dtype)
        y = np.empty((nb, nt, ne), dtype=dtype)
        _kernels.scan_forward(ud, dd, Bd, Cd, Dd, decay, hs, y, store)
        live = (z >= -EXP_CLAMP) & (z <= EXP_CLAMP) if store else None
        fn = _numba_backward(args, decay, live, hs, unbatched)
    else:
        y, fn = _numpy_scan(*args, unbatched)
    out = y[0] if unbatched else y
    return make_op("selective_scan", out, (u, delta, A, B, C, D_skip), fn)


def _numba_backward(args, decay, live, hs, unbatched):
    ud, dd, Ad, Bd, Cd, Dd = args

    def fn(g):
        g = np.ascontiguousarray(g[None] if unbatched else g, dtype=hs.dtype)
        gu, gdelta = np.empty_like(ud), np.empty_like(dd)
        gA, gB, gC, gD = np.zeros_like(Ad), np.zeros_like(Bd), np.zeros_like(Cd), np.zeros_like(Dd)
        _kernels.scan_backward(g, ud, dd, Ad, Bd, Cd, Dd, decay, live, hs, gu, gdelta, gA, gB, gC, gD)
        if unbatched:
            gu, gdelta, gB, gC = gu[0], gdelta[0], gB[0], gC[0]
        return gu, gdelta, gA, gB, gC, gD

    return fn


def _numpy_scan(ud, dd, Ad, Bd, Cd, Dd, unbatched):
    """Vectorised fallback: only the state update itself loops over time."""
    nb, nt, ne = ud.shape
    ns = Ad.shape[1]
    z = dd[..., None] * Ad  # [b,t,e,s]
    live = (z >= -EXP_CLAMP) & (z <= EXP_CLAMP)
    dA = np.exp(np.clip(z, -EXP_CLAMP, EXP_CLAMP))
    du = dd * ud
    dBu = du[..., None] * Bd[:, :, None, :]
    hs = np.empty(dBu.shape, dtype=dBu.dtype)
    h = np.zeros(hs.shape[:1] + hs.shape[2:], dtype=hs.dtype)
    for t in range(nt):
        h = dA[:, t] * h + dBu[:, t]
        hs[:, t] = h
    y = np.matmul(hs, Cd[..., None])[..., 0] + ud * Dd

    def fn(g):
        if unbatched:
            g = g[None]
        gC = np.matmul(g[:, :, None, :], hs)[:, :, 0, :]
        gD = (g * ud).sum(axis=(0, 1))
        # reverse-time accumulation of dL/dh_t
        dh_direct = g[..., None] * Cd[:, :, None, :]
        dh = np.empty(dh_direct.shape, dtype=dh_direct.dtype)
        acc = np.zeros(dh.shape[:1] + dh.shape[2:], dtype=dh.dtype)
        for t in range(nt - 1, -1, -1):
            acc = dh_direct[:, t] + acc
            dh[:, t] = acc
            acc = acc * dA[:, t]
        h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
        gz = dh * h_prev * dA * live
        gA = (gz * dd[..., None]).reshape(-1, ne, ns).sum(axis=0)
        gB = np.matmul(du[:, :, None, :], dh)[:, :, 0, :]
        dh_B = np.matmul(dh, Bd[..., None])[..., 0]
        gdelta = (gz * Ad).sum(axis=-1) + dh_B * ud
        gu = g * Dd + dh_B * dd
        if unbatched:
            gu, gdelta, gB, gC = gu[0], gdelta[0], gB[0], gC[0]
        return gu, gdelta, gA, gB, gC, gD

    return y, fn


# ---------------------------------------------------------------------------
# parameters


@dataclass
class SsmParams:
    """One scan direction: causal conv, input-dependent (delta, B, C), state matrix."""

    conv_w: Tensor  # [E, K]
    conv_b: Tensor  # [E]
    x_proj: Tensor  # [E, R + 2S]
    dt_proj_w: Tensor  # [R, E]
    dt_proj_b: Tensor  # [E]
    A_log: Tensor  # [E, S]; A = -exp(A_log)
    D: Tensor  # [E]

    @property
    def dt_rank(self) -> int:
        return self.dt_proj_w.shape[0]

    @property
    def d_state(self) -> int:
        return self.A_log.shape[1]

    def named(self) -> dict[str, Tensor]:
        return dict(self.__dict__)


@dataclass
class VimBlockParams:
    norm: Tensor  # [D]
    in_proj_x: Tensor  # [D, E]
    in_proj_z: Optional[Tensor]  # [D, E]; None for the literal sigma(H) gate
    fw: SsmParams
    bw: SsmParams
    out_proj: Tensor  # [E, D]

    def named(self) -> dict[str, Tensor]:
        out = {"norm": self.norm, "in_proj_x": self.in_proj_x}
        if self.in_proj_z is not None:
            out["in_proj_z"] = self.in_proj_z
        for direction in ("fw", "bw"):
            for k, v in getattr(self, direction).named().items():
                out[f"{direction}.{k}"] = v
        out["out_proj"] = self.out_proj
        return out


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


def init_ssm(rng: np.random.Generator, d_inner: int, d_state: int, dt_rank: int, conv_width: int,
             dt_min: float = 1e-3, dt_max: float = 1e-1) -> SsmParams:
    # softplus(dt_bias) starts log-uniform in [dt_min, dt_max]
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
    dt_bias = dt + np.log(-np.expm1(-dt))
    A = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
    dt_std = dt_rank ** -0.5
    return SsmParams(
        conv_w=_uniform(rng, conv_width, (d_inner, conv_width)),
        conv_b=_uniform(rng, conv_width, (d_inner,)),
        x_proj=_uniform(rng, d_inner, (d_inner, dt_rank + 2 * d_state)),
        dt_proj_w=Tensor(rng.uniform(-dt_std, dt_std, size=(dt_rank, d_inner)).astype(np.float32), requires_grad=True),
        dt_proj_b=Tensor(dt_bias.astype(np.float32), requires_grad=True),
        A_log=Tensor(np.log(A).astype(np.float32), requires_grad=True),
        D=Tensor(np.ones(d_inner, dtype=np.float32), requires_grad=True),
    )


def init_block(rng: np.random.Generator, d_model: int, d_inner: int, d_state: int, dt_rank: int,
               conv_width: int, gate: str = "projected") -> VimBlockParams:
    if gate not in ("projected", "literal"):
        raise ValueError(f"gate must be 'projected' or 'literal', got {gate!r}")
    if gate == "literal" and d_inner != d_model:
        raise ShapeError(f"the literal silu(H) gate needs expand=1 (inner width {d_inner} != model width {d_model})")
    return VimBlockParams(
        norm=Tensor(np.ones(d_model, dtype=np.float32), requires_grad=True),
        in_proj_x=_uniform(rng, d_model, (d_model, d_inner)),
        in_proj_z=_uniform(rng, d_model, (d_model, d_inner)) if gate == "projected" else None,
        fw=init_ssm(rng, d_inner, d_state, dt_rank, conv_width),
        bw=init_ssm(rng, d_inner, d_state, dt_rank, conv_width),
        out_proj=_uniform(rng, d_inner, (d_inner, d_model)),
    )


# ---------------------------------------------------------------------------
# forward


def mamba_direction(p: Tensor, params: SsmParams) -> Tensor:
    """``M(silu(causal_conv(p)))`` for one scan direction, ``p: [..., T, E]``."""
    x = silu(causal_conv1d(p, params.conv_w, params.conv_b))
    R, S = params.dt_rank, params.d_state
    xdbl = T.matmul(x, params.x_proj)
    dt_low = xdbl[..., :R]
    Bm = xdbl[..., R : R + S]
    Cm = xdbl[..., R + S :]
    delta = softplus(T.linear(dt_low, params.dt_proj_w, params.dt_proj_b))
    A = -T.exp(params.A_log)
    return selective_scan(x, delta, A, Bm, Cm, params.D)


def vim_block(H_prev: Tensor, params: VimBlockParams) -> Tensor:
    """One residual bidirectional encoder layer on ``[..., Z+1, D]`` tokens."""
    if H_prev.shape[-1] != params.norm.shape[0]:
        raise ShapeError(f"vim_block: token width {H_prev.shape[-1]} != model width {params.norm.shape[0]}")
    normed = rms_norm(H_prev, params.norm)
    p_fw = T.matmul(normed, params.in_proj_x)
    p_bw = reverse_seq(p_fw)
    q_fw = mamba_direction(p_fw, params.fw)
    q_bw = reverse_seq(mamba_direction(p_bw, params.bw))
    gate = silu(T.matmul(normed, params.in_proj_z)) if params.in_proj_z is not None else silu(H_prev)
    fused = gate * q_fw + gate * q_bw
    return T.matmul(fused, params.out_proj) + H_prev

"""Low-resolution synthesis and the super-resolution front end.

Bicubic resampling is expressed as two dense interpolation matrices
(``out = Wh @ img @ Ww.T``), which makes it exact, separable and trivially
differentiable.  :class:`SrGenerator` adds a learned residual on top of the
bicubic x4 upsample.
"""

from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import tensor as T
from .exceptions import ImageIOError, ShapeError
from .ops import conv2d, pixel_shuffle, rms_norm, silu
from .tensor import Tensor, no_grad

CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """``[n_out, n_in]`` resampling weights with half-pixel centres.

    Source indices beyond the border are clamped to the edge pixel.  When
    shrinking with ``antialias`` the kernel is stretched by the scale factor
    (the PIL/MATLAB convention).  Each row sums to one.
    """
    if n_in < 1 or n_out < 1:
        raise ShapeError(f"resize sizes must be >= 1, got {n_in} -> {n_out}")
    scale = n_out / n_in
    support = 2.0
    stretch = 1.0 / scale if (antialias and scale < 1) else 1.0
    W = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        centre = (i + 0.5) / scale - 0.5
        lo = math.floor(centre - support * stretch) + 1
        hi = math.floor(centre + support * stretch)
        taps = np.arange(lo, hi + 1)
        w = cubic_kernel((taps - centre) / stretch)
        np.add.at(W[i], np.clip(taps, 0, n_in - 1), w)
        W[i] /= W[i].sum()
    return W


def bicubic_resize(img, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize ``[..., H, W]`` images; result keeps the input dtype."""
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {out_h}x{out_w}")
    Wh = bicubic_matrix(arr.shape[-2], out_h, antialias).astype(arr.dtype)
    Ww = bicubic_matrix(arr.shape[-1], out_w, antialias).astype(arr.dtype)
    return np.matmul(np.matmul(Wh, arr), Ww.T)


def synthesize_lr(hr: np.ndarray, size: int) -> np.ndarray:
    """Down-sample HR images to ``size x size`` and clamp to [0, 1]."""
    return np.clip(bicubic_resize(hr, size, size), 0.0, 1.0)


# ---------------------------------------------------------------------------
# generator


def _conv_param(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / math.sqrt(c_in * k * k)
    w = Tensor(rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(np.float32), requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
    return w, b


def _channel_norm(x: Tensor, gain: Tensor) -> Tensor:
    # RMS over channels at every pixel; batch-independent unlike batch norm
    moved = T.transpose(x, (0, 2, 3, 1))
    return T.transpose(rms_norm(moved, gain), (0, 3, 1, 2))


class SrGenerator:
    """Residual x4 generator: head conv, K residual blocks, two x2 pixel-shuffle stages, tail conv.

    The output is ``clamp(bicubic_x4(x) + residual(x), 0, 1)``.  The tail conv
    starts at zero, so a fresh generator reproduces bicubic upsampling exactly.
    ``mode="bicubic"`` skips the residual path altogether.
    """

    def __init__(self, channels: int = 32, n_blocks: int = 4, mode: str = "generator",
                 frozen: bool = True, seed: int = 0) -> None:
        if mode not in ("generator", "bicubic"):
            raise ValueError(f"mode must be 'generator' or 'bicubic', got {mode!r}")
        self.channels, self.n_blocks, self.mode, self.scale = channels, n_blocks, mode, 4
        rng = np.random.default_rng(seed)
        c = channels
        self.params: dict[str, Tensor] = {}
        if mode == "generator":
            self.params["head.w"], self.params["head.b"] = _conv_param(rng, c, 3, 9)
            for i in range(n_blocks):
                for j in (1, 2):
                    self.params[f"res.{i}.conv{j}.w"], self.params[f"res.{i}.conv{j}.b"] = _conv_param(rng, c, c, 3)
                    self.params[f"res.{i}.norm{j}"] = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
            for i in range(2):
                self.params[f"up.{i}.w"], self.params[f"up.{i}.b"] = _conv_param(rng, 4 * c, c, 3)
            w, b = _conv_param(rng, 3, c, 9)
            w.data[:] = 0.0
            self.params["tail.w"], self.params["tail.b"] = w, b
        self.frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, flag: bool) -> None:
        self._frozen = bool(flag)
        for p in self.params.values():
            p.requires_grad = not self._frozen
            p.grad = None

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ShapeError(f"generator state mismatch: got {sorted(set(state) ^ set(self.params))[:5]}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"generator tensor {k!r}: stored shape {state[k].shape} != {p.shape}")
            p.data = np.asarray(state[k], dtype=np.float32).copy()

    def config(self) -> dict:
        return {"channels": self.channels, "n_blocks": self.n_blocks, "mode": self.mode}

    def residual(self, x: Tensor) -> Tensor:
        p = self.params
        h = silu(conv2d(x, p["head.w"], p["head.b"], padding=4))
        skip = h
        for i in range(self.n_blocks):
            r = conv2d(h, p[f"res.{i}.conv1.w"], p[f"res.{i}.conv1.b"], padding=1)
            r = silu(_channel_norm(r, p[f"res.{i}.norm1"]))
            r = conv2d(r, p[f"res.{i}.conv2.w"], p[f"res.{i}.conv2.b"], padding=1)
            h = h + _channel_norm(r, p[f"res.{i}.norm2"])
        h = h + skip
        for i in range(2):
            h = silu(pixel_shuffle(conv2d(h, p[f"up.{i}.w"], p[f"up.{i}.b"], padding=1), 2))
        return conv2d(h, p["tail.w"], p["tail.b"], padding=4)

    def forward(self, x_l) -> Tensor:
        x = x_l if isinstance(x_l, Tensor) else Tensor(np.asarray(x_l, dtype=np.float32))
        unbatched = x.ndim == 3
        if unbatched:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"generator expects [B,3,H,W] or [3,H,W] images, got {x_l.shape}")
        h, w = x.shape[2], x.shape[3]
        Wh = Tensor(bicubic_matrix(h, self.scale * h).astype(x.dtype))
        Ww = Tensor(bicubic_matrix(w, self.scale * w).T.astype(x.dtype))
        base = T.matmul(T.matmul(Wh, x), Ww)
        out = base if self.mode == "bicubic" else base + self.residual(x)
        out = T.clamp(out, 0.0, 1.0)
        return out[0] if unbatched else out

    __call__ = forward


def sr_generate(x_l, generator: SrGenerator, out_side: Optional[int] = None) -> Tensor:
    """Super-resolve LR images x4, optionally checking the expected output side."""
    side = np.shape(x_l.data if isinstance(x_l, Tensor) else x_l)[-1]
    if out_side is not None and side * generator.scale != out_side:
        raise ShapeError(f"input side {side} x {generator.scale} != configured output side {out_side}")
    return generator(x_l)


def super_resolve(x_l: np.ndarray, generator: SrGenerator, batch_size: int = 64) -> np.ndarray:
    """Gradient-free batched :func:`sr_generate` over an image array."""
    outs = []
    with no_grad():
        for i in range(0, len(x_l), batch_size):
            outs.append(generator(x_l[i : i + batch_size]).data)
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# image files


def load_image(path) -> np.ndarray:
    """Decode an image file to a ``[3, H, W]`` float32 array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageIOError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(img, path) -> None:
    """Write a ``[3, H, W]`` array in [0, 1] as 8-bit RGB PNG."""
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"save_image expects [3, H, W], got {arr.shape}")
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path, format="PNG")

"""Vision Mamba classifier: patch embedding, encoder stack, class-token head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Optional, Sequence

import numpy as np

from . import tensor as T
from .encoder import VimBlockParams, init_block, vim_block
from .exceptions import ShapeError
from .ops import conv2d, rms_norm
from .tensor import Tensor


@dataclass(frozen=True)
class VimConfig:
    embed_dim: int = 192
    depth: int = 24
    patch_size: int = 16
    in_channels: int = 3
    num_classes: int = 1000
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    input_side: int = 224
    dt_rank: Optional[int] = None
    final_norm: bool = True
    gate: str = "projected"

    def __post_init__(self) -> None:
        for name in ("embed_dim", "patch_size", "in_channels", "num_classes", "d_state", "expand",
                     "conv_width", "input_side"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.input_side % self.patch_size:
            raise ShapeError(f"input_side {self.input_side} is not divisible by patch_size {self.patch_size}")
        if self.num_patches % 2:
            raise ShapeError(f"patch count {self.num_patches} must be even to place the class token in the middle")
        if self.gate not in ("projected", "literal"):
            raise ValueError(f"gate must be 'projected' or 'literal', got {self.gate!r}")
        if self.gate == "literal" and self.expand != 1:
            raise ShapeError("the literal silu(H) gate needs expand=1")

    @property
    def d_inner(self) -> int:
        return self.expand * self.embed_dim

    @property
    def rank(self) -> int:
        return self.dt_rank if self.dt_rank is not None else math.ceil(self.embed_dim / 16)

    @property
    def grid(self) -> int:
        return self.input_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def cls_index(self) -> int:
        return self.num_patches // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VimConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


VIM_TINY = VimConfig()
TOY = VimConfig(embed_dim=64, depth=4, patch_size=8, num_classes=4, d_state=8, input_side=64)


@dataclass
class HiddenStates:
    """Per-layer token sequences ``H_0 .. H_N`` of one forward pass."""

    layers: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i: int) -> Tensor:
        return self.layers[i]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers) - 1


# ---------------------------------------------------------------------------
# functional forms


def patch_embed(x: Tensor, weight: Tensor, bias: Optional[Tensor], cls_token: Tensor, pos_embed: Tensor) -> Tensor:
    """Image ``[B,C,H,W]`` (or ``[C,H,W]``) to tokens ``[B, Z+1, D]`` with the class token mid-sequence."""
    J = weight.shape[-1]
    if x.shape[-1] % J or x.shape[-2] % J:
        raise ShapeError(f"image side {x.shape[-2]}x{x.shape[-1]} is not divisible by patch size {J}")
    unbatched = x.ndim == 3
    if unbatched:
        x = T.reshape(x, (1,) + x.shape)
    feat = conv2d(x, weight, bias, stride=J)  # [B, D, Kh, Kw]
    B, D = feat.shape[:2]
    Z = feat.shape[2] * feat.shape[3]
    if Z % 2:
        raise ShapeError(f"patch count {Z} must be even for the middle class token")
    if pos_embed.shape != (Z + 1, D):
        raise ShapeError(f"pos_embed has shape {pos_embed.shape}, expected ({Z + 1}, {D})")
    tokens = T.transpose(T.reshape(feat, (B, D, Z)), (0, 2, 1))  # raster order
    cls = T.expand(T.reshape(cls_token, (1, 1, D)), (B, 1, D))
    half = Z // 2
    seq = T.concat([tokens[:, :half], cls, tokens[:, half:]], axis=1) + pos_embed
    return seq[0] if unbatched else seq


def encode(H0: Tensor, blocks: Sequence[VimBlockParams]) -> HiddenStates:
    states = HiddenStates([H0])
    h = H0
    for block in blocks:
        h = vim_block(h, block)
        states.layers.append(h)
    return states


def classify_head(H_N: Tensor, weight: Tensor, bias: Optional[Tensor], norm: Optional[Tensor] = None) -> Tensor:
    """Linear map of the middle (class) token; every other row is ignored."""
    cls_index = (H_N.shape[-2] - 1) // 2
    h_cls = H_N[..., cls_index, :]
    if norm is not None:
        h_cls = rms_norm(h_cls, norm)
    return T.linear(h_cls, weight, bias)


def predict(logits) -> np.ndarray | int:
    """Argmax over the last axis; ties resolve to the lowest index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if arr.shape[-1] == 0:
        raise ShapeError("predict needs at least one logit")
    out = np.argmax(arr, axis=-1)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# model


def _gaussian(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(np.float32), requires_grad=True)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


class VimModel:
    """Parameters and forward pass of one ViM classification network."""

    def __init__(self, config: VimConfig, seed: int = 0) -> None:
        self.config = config
        rng = np.random.default_rng(seed)
        D, C, J = config.embed_dim, config.in_channels, config.patch_size
        fan = C * J * J
        self.patch_weight = _uniform(rng, fan, (D, C, J, J))
        self.patch_bias = _uniform(rng, fan, (D,))
        self.cls_token = _gaussian(rng, (D,))
        self.pos_embed = _gaussian(rng, (config.seq_len, D))
        self.blocks = [
            init_block(rng, D, config.d_inner, config.d_state, config.rank, config.conv_width, config.gate)
            for _ in range(config.depth)
        ]
        self.norm_f = Tensor(np.ones(D, dtype=np.float32), requires_grad=True) if config.final_norm else None
        self.head_weight = _uniform(rng, D, (D, config.num_classes))
        self.head_bias = _uniform(rng, D, (config.num_classes,))

    # -- parameters ------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {
            "patch_embed.weight": self.patch_weight,
            "patch_embed.bias": self.patch_bias,
            "cls_token": self.cls_token,
            "pos_embed": self.pos_embed,
        }
        for i, block in enumerate(self.blocks):
            for k, v in block.named().items():
                out[f"blocks.{i}.{k}"] = v
        if self.norm_f is not None:
            out["norm_f"] = self.norm_f
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        unknown = sorted(set(state) - set(own))
        missing = sorted(set(own) - set(state))
        if unknown or missing:
            raise ShapeError(f"state mismatch: unknown tensors {unknown[:5]}, missing tensors {missing[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ShapeError(f"tensor {k!r}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(np.float32, copy=True)

    def copy(self) -> "VimModel":
        fresh = VimModel(self.config)
        fresh.load_state_dict(self.state_dict())
        return fresh

    # -- forward ---------------------------------------------------------
    def embed(self, x: Tensor) -> Tensor:
        return patch_embed(x, self.patch_weight, self.patch_bias, self.cls_token, self.pos_embed)

    def head(self, H_N: Tensor) -> Tensor:
        return classify_head(H_N, self.head_weight, self.head_bias, self.norm_f)

    def forward(self, x) -> tuple[Tensor, HiddenStates]:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        side = self.config.input_side
        if x.shape[-2:] != (side, side) or x.shape[-3] != self.config.in_channels:
            raise ShapeError(
                f"model expects images of shape ({self.config.in_channels}, {side}, {side}), got {x.shape[-3:]}"
            )
        states = encode(self.embed(x), self.blocks)
        return self.head(states[-1]), states

    __call__ = forward


# ---------------------------------------------------------------------------
# audits


def _block_param_count(c: VimConfig) -> int:
    D, E, S, R, K = c.embed_dim, c.d_inner, c.d_state, c.rank, c.conv_width
    direction = E * K + E + E * (R + 2 * S) + R * E + E + E * S + E
    in_proj = D * E * (2 if c.gate == "projected" else 1)
    return D + in_proj + 2 * direction + E * D


def param_count(config: VimConfig) -> int:
    """Closed-form count of learnable scalars."""
    c = config
    D = c.embed_dim
    embed = D * c.in_channels * c.patch_size ** 2 + D + D + c.seq_len * D
    head = D * c.num_classes + c.num_classes + (D if c.final_norm else 0)
    return embed + c.depth * _block_param_count(c) + head


def macs_estimate(config: VimConfig) -> int:
    """Multiply-accumulates of one forward pass (matmuls, convs, scan steps)."""
    c = config
    D, E, S, R, K, Tn = c.embed_dim, c.d_inner, c.d_state, c.rank, c.conv_width, c.seq_len
    embed = c.num_patches * D * c.in_channels * c.patch_size ** 2
    in_proj = Tn * D * E * (2 if c.gate == "projected" else 1)
    # per step and state element: decay*h, delta*B*u, and the C readout
    direction = Tn * E * K + Tn * E * (R + 2 * S) + Tn * R * E + 3 * Tn * E * S
    block = in_proj + 2 * direction + Tn * E * D
    return embed + c.depth * block + D * c.num_classes


def flops_estimate(config: VimConfig) -> float:
    return 2.0 * macs_estimate(config)

"""AdamW with decoupled weight decay, and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Optional

import numpy as np

from .exceptions import ContractError, DomainError
from .tensor import Tensor

# matrices that skip weight decay; vectors (biases, gains, D) always skip it
NO_DECAY = ("pos_embed", "A_log")


def decays(name: str, param: Tensor) -> bool:
    return param.ndim >= 2 and name.split(".")[-1] not in NO_DECAY


class AdamW:
    """Bias-corrected Adam moments with weight decay applied directly to the weights.

    Parameters that are frozen (``requires_grad`` false) or received no
    gradient in the last backward pass are left untouched, decay included.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.05,
                 decay_mask: Optional[Mapping[str, bool]] = None) -> None:
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_mask = dict(decay_mask) if decay_mask is not None else {
            k: decays(k, p) for k, p in self.params.items()
        }
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if not p.requires_grad or g is None:
                continue
            if g.shape != p.data.shape:
                raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.data.shape}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay and self.decay_mask.get(name, False):
                p.data *= np.float32(1.0 - lr * self.weight_decay)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype, copy=False)

    # -- persistence -------------------------------------------------------
    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"optim.m.{k}"] = self.m[k]
            out[f"optim.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, tensors: Mapping[str, np.ndarray], step_count: int) -> None:
        for k, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"optim.{slot}.{k}"
                if key not in tensors:
                    raise ContractError(f"optimizer state is missing {key!r}")
                if tensors[key].shape != p.data.shape:
                    raise ContractError(f"optimizer buffer {key!r} has shape {tensors[key].shape}, parameter has {p.data.shape}")
                store[k] = np.array(tensors[key], dtype=p.data.dtype)
        if step_count < 0:
            raise ContractError(f"optimizer step count must be >= 0, got {step_count}")
        self.step_count = int(step_count)


def adamw_step(params: Mapping[str, Tensor], state: AdamW, lr: float) -> None:
    """Functional spelling of ``state.step(lr)`` for ``params`` owned by ``state``."""
    if set(params) != set(state.params):
        raise ContractError("parameter set differs from the one the optimizer state was built for")
    state.step(lr)


def cosine_lr(epoch: int, total_epochs: int, lr_init: float) -> float:
    """Single-cycle cosine annealing without warm-up or restarts."""
    if total_epochs < 1 or not 0 <= epoch < total_epochs:
        raise DomainError(f"epoch must lie in [0, {total_epochs}), got {epoch}")
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def trainable(params: Iterable[Tensor]) -> list[Tensor]:
    return [p for p in params if p.requires_grad]

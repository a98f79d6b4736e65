"""Multi-level distillation losses: logits KL, hidden-state MSE and their composition."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .exceptions import ContractError, DomainError, ShapeError
from .network import HiddenStates
from .ops import log_softmax
from .tensor import Tensor


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 1.0
    beta: float = 20.0
    delta_temp: float = 4.0
    use_ld: bool = True
    use_hsd: bool = True
    kl_direction: str = "student_first"
    temp_squared: bool = False

    def __post_init__(self) -> None:
        if not self.delta_temp > 0:
            raise DomainError(f"delta_temp must be > 0, got {self.delta_temp}")
        if self.alpha < 0 or self.beta < 0:
            raise DomainError(f"alpha and beta must be >= 0, got alpha={self.alpha}, beta={self.beta}")
        if self.kl_direction not in ("student_first", "teacher_first"):
            raise ValueError(f"kl_direction must be 'student_first' or 'teacher_first', got {self.kl_direction!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class DistillLosses:
    l_ce: Tensor
    l_ld: Tensor
    l_hsd: Tensor
    l_mkd: Tensor
    l_total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("l_ce", "l_ld", "l_hsd", "l_mkd", "l_total")}


def _zero() -> Tensor:
    return Tensor(np.zeros((), dtype=np.float32))


def _as_2d(logits: Tensor) -> Tensor:
    return T.reshape(logits, (1, logits.shape[0])) if logits.ndim == 1 else logits


def loss_ce(logits: Tensor, labels) -> Tensor:
    """Batch-mean cross entropy ``-log softmax(logits)[label]``."""
    logits = _as_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"got {labels.shape[0]} labels for {n} logit rows")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= c:
        raise DomainError(f"labels must be integers in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    return -T.tsum(log_softmax(logits) * onehot) * (1.0 / n)


def loss_ld(logit_s: Tensor, logit_t, delta_temp: float = 4.0, direction: str = "student_first") -> Tensor:
    """Tempered KL divergence between student and teacher logits (batch mean).

    ``student_first`` evaluates ``KL(p_s || p_t) = sum p_s (log p_s - log p_t)``;
    ``teacher_first`` the usual ``KL(p_t || p_s)``.  Teacher logits never carry
    gradient.
    """
    logit_s = _as_2d(logit_s)
    t_data = logit_t.data if isinstance(logit_t, Tensor) else np.asarray(logit_t, dtype=logit_s.dtype)
    logit_t = _as_2d(Tensor(t_data))
    if logit_s.shape != logit_t.shape:
        raise ShapeError(f"student logits {logit_s.shape} and teacher logits {logit_t.shape} differ")
    log_ps = log_softmax(logit_s, delta_temp)
    log_pt = log_softmax(logit_t, delta_temp)
    if direction == "student_first":
        kl = T.tsum(T.exp(log_ps) * (log_ps - log_pt))
    elif direction == "teacher_first":
        kl = T.tsum(T.exp(log_pt) * (log_pt - log_ps))
    else:
        raise ValueError(f"unknown KL direction {direction!r}")
    return kl * (1.0 / logit_s.shape[0])


def loss_hsd(hs_s: HiddenStates | Sequence[Tensor], hs_t: HiddenStates | Sequence) -> Tensor:
    """Sum over layers 1..N of the per-layer mean squared difference.

    The embedding output (layer 0) is excluded.  Teacher states never carry
    gradient.
    """
    s_layers = list(hs_s)
    t_layers = list(hs_t)
    if len(s_layers) != len(t_layers):
        raise ContractError(f"student has {len(s_layers)} hidden-state layers, teacher has {len(t_layers)}")
    total: Optional[Tensor] = None
    for i in range(1, len(s_layers)):
        s = s_layers[i]
        t = t_layers[i].data if isinstance(t_layers[i], Tensor) else np.asarray(t_layers[i])
        if s.shape != t.shape:
            raise ContractError(f"hidden-state layer {i}: student shape {s.shape} != teacher shape {t.shape}")
        term = T.mean(T.square(s - Tensor(t.astype(s.dtype, copy=False))))
        total = term if total is None else total + term
    return _zero() if total is None else total


def compose(l_ce: Tensor, l_ld: Optional[Tensor], l_hsd: Optional[Tensor], cfg: DistillConfig) -> DistillLosses:
    """Assemble ``L_MKD = L_LD + beta L_HSD`` and ``L_total = L_CE + alpha L_MKD``."""
    ld = l_ld if (cfg.use_ld and l_ld is not None) else _zero()
    hsd = l_hsd if (cfg.use_hsd and l_hsd is not None) else _zero()
    if cfg.temp_squared and cfg.use_ld:
        ld = ld * (cfg.delta_temp ** 2)
    if cfg.use_ld and cfg.use_hsd:
        mkd = ld + hsd * cfg.beta
    elif cfg.use_ld:
        mkd = ld
    elif cfg.use_hsd:
        mkd = hsd * cfg.beta
    else:
        mkd = _zero()
    total = l_ce + mkd * cfg.alpha if (cfg.use_ld or cfg.use_hsd) else l_ce
    return DistillLosses(l_ce=l_ce, l_ld=ld, l_hsd=hsd, l_mkd=mkd, l_total=total)


def distill_losses(student_logits: Tensor, student_states: HiddenStates, labels,
                   teacher_logits, teacher_states, cfg: DistillConfig) -> DistillLosses:
    """All loss terms from precomputed student and teacher outputs."""
    l_ce = loss_ce(student_logits, labels)
    l_ld = loss_ld(student_logits, teacher_logits, cfg.delta_temp, cfg.kl_direction) if cfg.use_ld else None
    l_hsd = loss_hsd(student_states, teacher_states) if cfg.use_hsd else None
    return compose(l_ce, l_ld, l_hsd, cfg)


def loss_total(x_lr, x_hr, labels, teacher, student, cfg: DistillConfig, sr=None) -> DistillLosses:
    """Run the frozen teacher on HR and the student pipeline on LR, then compose the losses.

    ``sr`` maps LR images to the student's input resolution; ``None`` means the
    inputs are already super-resolved.
    """
    with T.no_grad():
        t_logits, t_states = teacher(x_hr)
    x_s = sr(x_lr) if sr is not None else x_lr
    s_logits, s_states = student(x_s)
    return distill_losses(s_logits, s_states, labels, t_logits, t_states, cfg)

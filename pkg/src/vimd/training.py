"""Teacher and student training, evaluation, ablations and run configuration."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .checkpoint import (
    Checkpoint, check_config_match, load_model_state, read_checkpoint, write_checkpoint,
)
from .data import ImageDataset, stratified_split
from .distill import DistillConfig, DistillLosses, compose, distill_losses, loss_ce
from .exceptions import ConfigError, ContractError
from .network import TOY, VIM_TINY, HiddenStates, VimConfig, VimModel, predict
from .optim import AdamW, cosine_lr
from .sr import SrGenerator, super_resolve
from .tensor import Tensor, backward, no_grad

METRIC_COLUMNS = ("epoch", "lr", "l_ce", "l_ld", "l_hsd", "l_mkd", "l_total", "train_acc", "val_acc")
LOSS_KEYS = ("l_ce", "l_ld", "l_hsd", "l_mkd", "l_total")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_init: float = 1e-6
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    seed: int = 0
    schedule: str = "cosine"
    val_fraction: float = 0.1
    hflip: bool = True
    teacher_epochs: Optional[int] = None
    fine_tune_sr: bool = False
    eval_batch_size: int = 64

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.teacher_epochs is not None and self.teacher_epochs < 1:
            raise ConfigError(f"teacher_epochs must be >= 1, got {self.teacher_epochs}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.lr_init > 0:
            raise ConfigError(f"lr_init must be > 0, got {self.lr_init}")
        if self.schedule != "cosine":
            raise ConfigError(f"only the cosine schedule is supported, got {self.schedule!r}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def for_teacher(self) -> "TrainConfig":
        return replace(self, epochs=self.teacher_epochs or self.epochs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


PAPER_TRAIN = TrainConfig()
TOY_TRAIN = TrainConfig(epochs=15, lr_init=3e-4, batch_size=16, teacher_epochs=30)
PROFILES = {
    "paper": {"train": PAPER_TRAIN, "model": VIM_TINY},
    "toy": {"train": TOY_TRAIN, "model": TOY},
}


# ---------------------------------------------------------------------------
# key=value run configuration


@dataclass
class RunConfig:
    profile: str = "toy"
    train: TrainConfig = TOY_TRAIN
    model: VimConfig = TOY
    distill: DistillConfig = field(default_factory=DistillConfig)
    sr: dict = field(default_factory=lambda: {"mode": "generator", "channels": 32, "n_blocks": 4, "seed": 0})
    data: dict = field(default_factory=lambda: {"lr_size": 16})

    def to_dict(self) -> dict:
        return {
            "profile": self.profile, "train": self.train.to_dict(), "model": self.model.to_dict(),
            "distill": self.distill.to_dict(), "sr": dict(self.sr), "data": dict(self.data),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        base = cls.for_profile(d.get("profile", "toy"))
        return cls(
            profile=base.profile,
            train=TrainConfig.from_dict({**base.train.to_dict(), **d.get("train", {})}),
            model=VimConfig.from_dict({**base.model.to_dict(), **d.get("model", {})}),
            distill=DistillConfig.from_dict({**base.distill.to_dict(), **d.get("distill", {})}),
            sr={**base.sr, **d.get("sr", {})},
            data={**base.data, **d.get("data", {})},
        )

    @classmethod
    def for_profile(cls, name: str) -> "RunConfig":
        if name not in PROFILES:
            raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        p = PROFILES[name]
        data = {"lr_size": 56} if name == "paper" else {"lr_size": 16}
        return cls(profile=name, train=p["train"], model=p["model"], data=data)

    def with_overrides(self, overrides: Mapping[str, str]) -> "RunConfig":
        """Apply ``section.key -> text`` overrides, coercing each to the field's type."""
        d = self.to_dict()
        for dotted, text in overrides.items():
            if "." not in dotted:
                raise ConfigError(f"config key {dotted!r} must look like section.name")
            section, key = dotted.split(".", 1)
            if section not in ("train", "model", "distill", "sr", "data"):
                raise ConfigError(f"unknown config section {section!r} in {dotted!r}")
            if section in ("train", "model", "distill") and key not in d[section]:
                raise ConfigError(f"unknown config key {dotted!r}")
            d[section][key] = coerce_value(text, d[section].get(key), dotted)
        try:
            return RunConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def coerce_value(text: str, like, key: str = "value"):
    """Parse ``text`` into the type of ``like`` (untyped keys become int, float, bool or str)."""
    text = text.strip()
    low = text.lower()
    if isinstance(like, bool) or (like is None and low in ("true", "false")):
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if low in ("none", "null", ""):
        return None
    try:
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if like is None:
            for cast in (int, float):
                try:
                    return cast(text)
                except ValueError:
                    pass
            return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(like).__name__}") from exc
    return text


def parse_config_text(text: str) -> tuple[Optional[str], dict[str, str]]:
    """Split ``key = value`` lines into the profile name and the remaining overrides."""
    profile, overrides = None, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "profile":
            profile = value
        else:
            overrides[key] = value
    return profile, overrides


def load_run_config(path=None, overrides: Optional[Mapping[str, str]] = None,
                    profile: Optional[str] = None) -> RunConfig:
    file_profile, file_over = None, {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        file_profile, file_over = parse_config_text(path.read_text())
    base = RunConfig.for_profile(profile or file_profile or "toy")
    return base.with_overrides({**file_over, **(overrides or {})})


def dump_config_text(cfg: RunConfig) -> str:
    lines = [f"profile = {cfg.profile}"]
    for section, values in cfg.to_dict().items():
        if section == "profile":
            continue
        for k, v in values.items():
            lines.append(f"{section}.{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


def build_sr(spec: Mapping) -> SrGenerator:
    return SrGenerator(channels=int(spec.get("channels", 32)), n_blocks=int(spec.get("n_blocks", 4)),
                       mode=spec.get("mode", "generator"), frozen=True, seed=int(spec.get("seed", 0)))


# ---------------------------------------------------------------------------
# evaluation


def _forward_logits(model: VimModel, images: np.ndarray, batch_size: int) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            logits, _ = model(images[i : i + batch_size])
            out.append(logits.data)
    return np.concatenate(out, axis=0)


def evaluate_top1(model: VimModel, dataset: ImageDataset, sr: Optional[SrGenerator] = None,
                  batch_size: int = 64) -> float:
    """Fraction of ``dataset`` whose arg-max prediction equals the label.

    With ``sr`` the images are super-resolved first (the student pipeline).
    """
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    images = dataset.images
    if sr is not None:
        images = super_resolve(images, sr, batch_size)
    preds = predict(_forward_logits(model, images, batch_size))
    return float(np.mean(preds == dataset.labels))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: VimModel
    history: list[dict]
    best_epoch: int
    best_val_acc: float
    checkpoint: Optional[Path] = None
    metrics: Optional[Path] = None


def _flip(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images[..., ::-1])


def _oriented(arrays: Sequence[np.ndarray], idx: np.ndarray, flips: np.ndarray) -> np.ndarray:
    """Select ``arrays[flip][i]`` for every ``i`` in ``idx``."""
    if len(arrays) == 1:
        return arrays[0][idx]
    return np.where(flips.reshape((-1,) + (1,) * (arrays[0].ndim - 1)).astype(bool),
                    arrays[1][idx], arrays[0][idx])


class _Objective:
    """Produces :class:`DistillLosses` for one mini-batch of training indices."""

    def params(self) -> dict[str, Tensor]:
        return {}

    def __call__(self, model: VimModel, idx: np.ndarray, flips: np.ndarray, labels: np.ndarray):
        raise NotImplementedError


class _CrossEntropy(_Objective):
    def __init__(self, views: Sequence[np.ndarray]) -> None:
        self.views = views

    def __call__(self, model, idx, flips, labels):
        logits, _ = model(_oriented(self.views, idx, flips))
        off = DistillConfig(use_ld=False, use_hsd=False)
        return compose(loss_ce(logits, labels), None, None, off), logits


class _Distill(_Objective):
    def __init__(self, student_views, lr_views, teacher_logits, teacher_states, cfg: DistillConfig,
                 sr: Optional[SrGenerator]) -> None:
        self.student_views = student_views
        self.lr_views = lr_views
        self.teacher_logits = teacher_logits
        self.teacher_states = teacher_states
        self.cfg = cfg
        self.sr = sr

    def params(self) -> dict[str, Tensor]:
        if self.sr is None:
            return {}
        return {f"sr.{k}": v for k, v in self.sr.named_parameters().items()}

    def __call__(self, model, idx, flips, labels):
        if self.sr is not None:
            x = self.sr(_oriented(self.lr_views, idx, flips))
        else:
            x = _oriented(self.student_views, idx, flips)
        logits, states = model(x)
        t_logits = _oriented(self.teacher_logits, idx, flips) if self.cfg.use_ld else None
        t_states = None
        if self.cfg.use_hsd:
            t_states = [None] + [_oriented([v[i] for v in self.teacher_states], idx, flips)
                                 for i in range(len(self.teacher_states[0]))]
        return distill_losses(logits, states, labels, t_logits, t_states, self.cfg), logits


def _views(images: np.ndarray, hflip: bool) -> list[np.ndarray]:
    return [images, _flip(images)] if hflip else [images]


def _write_metrics(path: Optional[Path], history: list[dict]) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [f"{row[k]:.9g}" for k in METRIC_COLUMNS[1:]])


def read_metrics(path) -> list[dict]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def _fit(model: VimModel, objective: _Objective, labels: np.ndarray, val_fn: Callable[[], float],
         cfg: TrainConfig, out_dir: Optional[Path], tag: str, meta: dict,
         resume: bool = False) -> TrainResult:
    n = len(labels)
    if n == 0:
        raise ContractError("training set is empty")
    params = {**{k: p for k, p in model.named_parameters().items() if p.requires_grad}, **objective.params()}
    opt = AdamW(params, lr=cfg.lr_init, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    last_path = out_dir / f"{tag}.last.ckpt" if out_dir else None
    best_path = out_dir / f"{tag}.ckpt" if out_dir else None
    csv_path = out_dir / f"{tag}.metrics.csv" if out_dir else None
    history: list[dict] = []
    best = {"val_acc": -1.0, "epoch": -1, "state": None}
    start = 0
    if resume and last_path is not None and last_path.is_file():
        start, history, best = _restore(last_path, model, opt, objective)

    for epoch in range(start, cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        flips = rng.integers(0, 2, n) if cfg.hflip else np.zeros(n, dtype=np.int64)
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        correct = 0
        for step, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s : s + cfg.batch_size]
            opt.zero_grad()
            losses, logits = objective(model, idx, flips[idx], labels[idx])
            vals = losses.values()
            if not all(math.isfinite(v) for v in vals.values()):
                raise ContractError(f"{tag}: non-finite loss at epoch {epoch} step {step}: {vals}")
            backward(losses.l_total)
            opt.step(lr)
            for k in LOSS_KEYS:
                sums[k] += vals[k] * len(idx)
            correct += int(np.sum(predict(logits.data) == labels[idx]))
        val_acc = val_fn()
        row = {"epoch": epoch, "lr": lr, **{k: sums[k] / n for k in LOSS_KEYS},
               "train_acc": correct / n, "val_acc": val_acc}
        history.append(row)
        if val_acc > best["val_acc"]:
            best = {"val_acc": val_acc, "epoch": epoch, "state": model.state_dict()}
        _write_metrics(csv_path, history)
        if last_path is not None:
            _save_last(last_path, model, opt, objective, history, best, cfg, meta, epoch + 1)

    model.load_state_dict(best["state"])
    ckpt = None
    if best_path is not None:
        ckpt = write_checkpoint(Checkpoint(
            {**meta, "model_config": model.config.to_dict(), "train_config": cfg.to_dict(),
             "state": {"best_epoch": best["epoch"], "best_val_acc": best["val_acc"], "epochs": cfg.epochs}},
            {f"model.{k}": v for k, v in model.state_dict().items()} | _sr_tensors(objective),
        ), best_path)
    return TrainResult(model, history, best["epoch"], best["val_acc"], ckpt, csv_path)


def _sr_tensors(objective: _Objective) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in objective.params().items()}


def _save_last(path, model, opt, objective, history, best, cfg, meta, next_epoch) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update(_sr_tensors(objective))
    tensors.update(opt.state_tensors())
    tensors.update({f"best.{k}": v for k, v in best["state"].items()})
    state = {"next_epoch": next_epoch, "optimizer_step": opt.step_count, "history": history,
             "best_epoch": best["epoch"], "best_val_acc": best["val_acc"]}
    write_checkpoint(Checkpoint({**meta, "model_config": model.config.to_dict(),
                                 "train_config": cfg.to_dict(), "state": state}, tensors), path)


def _restore(path, model, opt, objective):
    ckpt = read_checkpoint(path)
    load_model_state(ckpt, model)
    for k, p in objective.params().items():
        p.data = ckpt.tensors[k].copy()
    st = ckpt.metadata["state"]
    opt.load_state_tensors(ckpt.tensors, st["optimizer_step"])
    best = {"val_acc": st["best_val_acc"], "epoch": st["best_epoch"], "state": ckpt.group("best")}
    return st["next_epoch"], list(st["history"]), best


# ---------------------------------------------------------------------------
# public entry points


def _split(dataset: ImageDataset, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise ContractError("training set is empty")
    if cfg.val_fraction == 0:
        return np.arange(len(dataset)), np.zeros(0, dtype=np.int64)
    return stratified_split(dataset.labels, cfg.val_fraction, cfg.seed)


def _val_fn(model: VimModel, images: np.ndarray, labels: np.ndarray, bs: int) -> Callable[[], float]:
    if len(labels) == 0:
        return lambda: 0.0
    return lambda: float(np.mean(predict(_forward_logits(model, images, bs)) == labels))


def train_teacher(dataset_hr: ImageDataset, model_cfg: VimConfig, cfg: TrainConfig,
                  out_dir=None, resume: bool = False) -> TrainResult:
    """Cross-entropy training on HR images; the best-validation weights are kept."""
    cfg = cfg.for_teacher()
    tr, va = _split(dataset_hr, cfg)
    model = VimModel(model_cfg, seed=cfg.seed)
    images = dataset_hr.images[tr]
    objective = _CrossEntropy(_views(images, cfg.hflip))
    val = _val_fn(model, dataset_hr.images[va], dataset_hr.labels[va], cfg.eval_batch_size)
    meta = {"kind": "teacher", "class_names": dataset_hr.class_names}
    return _fit(model, objective, dataset_hr.labels[tr], val, cfg,
                Path(out_dir) if out_dir else None, "teacher", meta, resume)


@dataclass
class TeacherCache:
    """Frozen-teacher outputs for every training image and orientation."""

    logits: list[np.ndarray]
    states: Optional[list[list[np.ndarray]]]


def teacher_outputs(teacher: VimModel, views: Sequence[np.ndarray], keep_states: bool,
                    batch_size: int = 64) -> TeacherCache:
    logits, states = [], [] if keep_states else None
    with no_grad():
        for images in views:
            lg, st = [], []
            for i in range(0, len(images), batch_size):
                out, hs = teacher(images[i : i + batch_size])
                lg.append(out.data)
                if keep_states:
                    st.append([h.data for h in list(hs)[1:]])
            logits.append(np.concatenate(lg))
            if keep_states:
                states.append([np.concatenate([b[j] for b in st]) for j in range(len(st[0]))])
    return TeacherCache(logits, states)


def train_student(dataset_lr: ImageDataset, dataset_hr: ImageDataset, teacher: VimModel,
                  distill_cfg: DistillConfig, cfg: TrainConfig, sr: Optional[SrGenerator] = None,
                  student_cfg: Optional[VimConfig] = None, out_dir=None, resume: bool = False,
                  cache: Optional[TeacherCache] = None) -> TrainResult:
    """Train SR front end plus ViM on LR images under the composed distillation loss.

    The teacher only sees HR images and is never updated.  The SR generator
    stays frozen unless ``cfg.fine_tune_sr`` is set.
    """
    student_cfg = student_cfg or teacher.config
    check_config_match(teacher.config.to_dict(), student_cfg.to_dict(), "teacher/student")
    if len(dataset_lr) != len(dataset_hr) or not np.array_equal(dataset_lr.labels, dataset_hr.labels):
        raise ContractError("LR and HR datasets are not paired")
    sr = sr or SrGenerator(mode="bicubic")
    if dataset_lr.side * sr.scale != student_cfg.input_side:
        raise ContractError(
            f"LR side {dataset_lr.side} x{sr.scale} does not match model input side {student_cfg.input_side}"
        )
    tr, va = _split(dataset_lr, cfg)
    if cache is None and (distill_cfg.use_ld or distill_cfg.use_hsd):
        cache = teacher_outputs(teacher, _views(dataset_hr.images[tr], cfg.hflip), distill_cfg.use_hsd,
                                cfg.eval_batch_size)
    if distill_cfg.use_hsd and (cache is None or cache.states is None):
        raise ContractError("hidden-state distillation needs cached teacher states")
    lr_views = _views(dataset_lr.images[tr], cfg.hflip)
    sr.frozen = not cfg.fine_tune_sr
    if cfg.fine_tune_sr:
        student_views = None
    else:
        student_views = [super_resolve(v, sr, cfg.eval_batch_size) for v in lr_views]
    model = VimModel(student_cfg, seed=cfg.seed)
    objective = _Distill(student_views, lr_views, cache.logits if cache else None,
                         cache.states if cache else None, distill_cfg,
                         sr if cfg.fine_tune_sr else None)
    val_images, val_labels = dataset_lr.images[va], dataset_lr.labels[va]
    if len(va):
        val = lambda: evaluate_top1(model, ImageDataset(val_images, val_labels, dataset_lr.class_names),
                                    sr, cfg.eval_batch_size)
    else:
        val = lambda: 0.0
    meta = {"kind": "student", "class_names": dataset_lr.class_names, "distill_config": distill_cfg.to_dict(),
            "sr_config": sr.config()}
    try:
        return _fit(model, objective, dataset_lr.labels[tr], val, cfg,
                    Path(out_dir) if out_dir else None, "student", meta, resume)
    finally:
        sr.frozen = True


# ---------------------------------------------------------------------------
# ablation and beta sweep

ARMS = {
    "ce": DistillConfig(use_ld=False, use_hsd=False),
    "ce+ld": DistillConfig(use_ld=True, use_hsd=False),
    "ce+ld+hsd": DistillConfig(use_ld=True, use_hsd=True),
}


def _with(base: DistillConfig, arm: DistillConfig) -> DistillConfig:
    return replace(base, use_ld=arm.use_ld, use_hsd=arm.use_hsd)


def run_ablation(train_hr: ImageDataset, test_hr: ImageDataset, lr_size: int, model_cfg: VimConfig,
                 cfg: TrainConfig, seeds: Sequence[int], distill_base: Optional[DistillConfig] = None,
                 arms: Sequence[str] = tuple(ARMS), sr: Optional[SrGenerator] = None, out_dir=None,
                 teacher: Optional[VimModel] = None, log: Callable[[str], None] = lambda s: None) -> dict:
    """Train one shared teacher, then every arm for every seed; report test top-1 per run."""
    distill_base = distill_base or DistillConfig()
    out_dir = Path(out_dir) if out_dir else None
    train_lr, test_lr = train_hr.downsample(lr_size), test_hr.downsample(lr_size)
    sr = sr or SrGenerator(mode="bicubic")
    if teacher is None:
        res = train_teacher(train_hr, model_cfg, cfg, out_dir)
        teacher = res.model
        log(f"teacher: best val {res.best_val_acc:.3f} at epoch {res.best_epoch}")
    teacher_acc = evaluate_top1(teacher, test_hr, None, cfg.eval_batch_size)
    results: dict[str, dict[int, float]] = {a: {} for a in arms}
    keep_states = any(ARMS[a].use_hsd for a in arms)
    for seed in seeds:
        scfg = replace(cfg, seed=seed)
        tr, _ = _split(train_lr, scfg)
        cache = teacher_outputs(teacher, _views(train_hr.images[tr], scfg.hflip), keep_states,
                                scfg.eval_batch_size)
        for arm in arms:
            dcfg = _with(distill_base, ARMS[arm])
            run_dir = out_dir / f"{arm}_seed{seed}" if out_dir else None
            res = train_student(train_lr, train_hr, teacher, dcfg, scfg, sr, out_dir=run_dir, cache=cache)
            acc = evaluate_top1(res.model, test_lr, sr, cfg.eval_batch_size)
            results[arm][seed] = acc
            log(f"{arm} seed {seed}: test top-1 {acc:.4f}")
    summary = {
        "teacher_test_acc": teacher_acc,
        "runs": {a: {str(s): v for s, v in r.items()} for a, r in results.items()},
        "mean": {a: float(np.mean(list(r.values()))) for a, r in results.items()},
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def sweep_beta(train_hr: ImageDataset, test_hr: ImageDataset, lr_size: int, teacher: VimModel,
               cfg: TrainConfig, betas: Sequence[float] = (1, 10, 20, 30),
               distill_base: Optional[DistillConfig] = None, sr: Optional[SrGenerator] = None,
               out_csv=None, log: Callable[[str], None] = lambda s: None) -> list[dict]:
    """Full-loss student runs over ``betas``; one result row per value."""
    distill_base = distill_base or DistillConfig()
    train_lr, test_lr = train_hr.downsample(lr_size), test_hr.downsample(lr_size)
    sr = sr or SrGenerator(mode="bicubic")
    tr, _ = _split(train_lr, cfg)
    cache = teacher_outputs(teacher, _views(train_hr.images[tr], cfg.hflip), True, cfg.eval_batch_size)
    rows = []
    for beta in betas:
        dcfg = replace(distill_base, beta=float(beta), use_ld=True, use_hsd=True)
        res = train_student(train_lr, train_hr, teacher, dcfg, cfg, sr, cache=cache)
        acc = evaluate_top1(res.model, test_lr, sr, cfg.eval_batch_size)
        finite = all(math.isfinite(r[k]) for r in res.history for k in LOSS_KEYS)
        rows.append({"beta": float(beta), "top1": acc, "final_l_total": res.history[-1]["l_total"],
                     "finite": finite})
        log(f"beta {beta}: top-1 {acc:.4f}")
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with out_csv.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["beta", "top1", "final_l_total", "finite"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def fit_sr_generator(generator: SrGenerator, lr_images: np.ndarray, hr_images: np.ndarray,
                     epochs: int = 5, lr_init: float = 1e-3, batch_size: int = 16, seed: int = 0) -> list[float]:
    """Per-pixel L2 training of the generator residual against HR targets; returns epoch losses."""
    from . import tensor as T

    if generator.mode != "generator":
        raise ContractError("only a generator-mode SR network has trainable parameters")
    if len(lr_images) != len(hr_images) or len(lr_images) == 0:
        raise ContractError("LR and HR image sets must be non-empty and paired")
    generator.frozen = False
    opt = AdamW(generator.named_parameters(), lr=lr_init, weight_decay=0.0)
    losses = []
    try:
        for epoch in range(epochs):
            rate = cosine_lr(epoch, epochs, lr_init)
            order = np.random.default_rng([seed, epoch]).permutation(len(lr_images))
            total = 0.0
            for s in range(0, len(order), batch_size):
                idx = order[s : s + batch_size]
                opt.zero_grad()
                loss = T.mean(T.square(generator(lr_images[idx]) - Tensor(hr_images[idx])))
                backward(loss)
                opt.step(rate)
                total += float(loss.data) * len(idx)
            losses.append(total / len(order))
    finally:
        generator.frozen = True
    return losses

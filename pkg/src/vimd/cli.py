"""Command-line entry point: ``vimd <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 contract or
validation error, 3 acceptance-gate failure.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from contextlib import ExitStack
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .exceptions import ConfigError, ContractError, VimdError

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_GATE = 0, 1, 2, 3


class UsageError(VimdError):
    """Bad command-line usage."""


class GateFailure(VimdError):
    """An acceptance gate did not pass."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def version_string() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        base = version("artifact")
    except PackageNotFoundError:
        base = "0.0.0"
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"{base}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _thread_limit(args) -> Optional[int]:
    if getattr(args, "deterministic", False) or os.environ.get("VIMD_DETERMINISTIC") == "1":
        return 1
    value = os.environ.get("VIMD_THREADS")
    if value:
        try:
            n = int(value)
        except ValueError as exc:
            raise ConfigError(f"VIMD_THREADS must be an integer, got {value!r}") from exc
        if n < 1:
            raise ConfigError(f"VIMD_THREADS must be >= 1, got {n}")
        return n
    return None


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v
    return out


def _run_config(args, extra: Optional[dict[str, str]] = None):
    from .training import load_run_config

    over = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        over["train.seed"] = str(args.seed)
    over.update(extra or {})
    return load_run_config(getattr(args, "config", None), over, getattr(args, "profile", None))


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {p}")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


class Manifest:
    """One JSON record per run, enough to repeat it."""

    def __init__(self, command: str, argv: Sequence[str]) -> None:
        self.data = {"command": command, "argv": list(argv), "version": version_string(),
                     "config": None, "seed": None, "timings": {}, "outputs": []}
        self._t0 = time.perf_counter()
        self.data["timings"]["started"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    def config(self, cfg) -> None:
        self.data["config"] = cfg.to_dict()
        self.data["seed"] = cfg.train.seed

    def output(self, path) -> None:
        self.data["outputs"].append(str(path))

    def write(self, out_dir: Path, status: str) -> Path:
        self.data["status"] = status
        self.data["timings"]["seconds"] = round(time.perf_counter() - self._t0, 3)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{self.data['command']}.manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True))
        return path


def _log(msg: str) -> None:
    print(msg, flush=True)


def _sr_from(cfg, ckpt=None):
    from .training import build_sr

    spec = dict(cfg.sr) if ckpt is None else {**cfg.sr, **ckpt.metadata.get("sr_config", {})}
    sr = build_sr(spec)
    if ckpt is not None:
        tensors = ckpt.group("sr")
        if tensors:
            sr.load_state_dict(tensors)
    return sr


def _lr_pair(hr_root: Path, lr_root: Optional[str], size: int):
    from .data import load_dataset, lr_cache_root, paired_lr

    hr = load_dataset(hr_root)
    root = Path(lr_root) if lr_root else lr_cache_root(hr_root, size)
    return hr, paired_lr(hr, size, root if root.is_dir() else None)


# ---------------------------------------------------------------------------
# commands


def cmd_make_toy(args, manifest: Manifest) -> int:
    from .data import make_texture_dataset, save_dataset

    train, test = make_texture_dataset(args.n_train, args.n_test, args.side, args.seed)
    out = Path(args.out)
    for name, ds in (("train", train), ("test", test)):
        save_dataset(ds, out / name)
        manifest.output(out / name)
    _log(f"wrote {len(train)} train and {len(test)} test images to {out}")
    return EXIT_OK


def cmd_synth_lr(args, manifest: Manifest) -> int:
    from .data import synth_lr_tree

    root = _require_dir(args.data_root, "data root")
    if args.size < 1:
        raise UsageError(f"--size must be >= 1, got {args.size}")
    stats = synth_lr_tree(root, args.size, args.out)
    manifest.output(stats["out_root"])
    _log(f"{stats['out_root']}: {stats['written']} written, {stats['skipped']} unchanged")
    return EXIT_OK


def cmd_train_teacher(args, manifest: Manifest) -> int:
    from .data import load_dataset
    from .training import dump_config_text, train_teacher

    cfg = _run_config(args)
    manifest.config(cfg)
    root = _require_dir(args.data_root, "data root")
    ds = load_dataset(root)
    model_cfg = replace(cfg.model, num_classes=len(ds.class_names), input_side=ds.side)
    out = Path(args.out)
    res = train_teacher(ds, model_cfg, cfg.train, out, resume=args.resume)
    (out / "teacher.config").write_text(dump_config_text(cfg))
    for p in (res.checkpoint, res.metrics, out / "teacher.config"):
        manifest.output(p)
    _log(f"teacher: best val top-1 {res.best_val_acc:.4f} at epoch {res.best_epoch}; saved {res.checkpoint}")
    return EXIT_OK


def cmd_train_student(args, manifest: Manifest) -> int:
    from .checkpoint import load_model
    from .training import dump_config_text, train_student

    extra = {}
    if args.no_ld:
        extra["distill.use_ld"] = "false"
    if args.no_hsd:
        extra["distill.use_hsd"] = "false"
    if args.beta is not None:
        extra["distill.beta"] = str(args.beta)
    if args.fine_tune_sr:
        extra["train.fine_tune_sr"] = "true"
    cfg = _run_config(args, extra)
    manifest.config(cfg)
    root = _require_dir(args.data_root, "data root")
    teacher, _ = load_model(_require_file(args.teacher_ckpt, "teacher checkpoint"))
    sr = _sr_from(cfg)
    lr_size = teacher.config.input_side // sr.scale
    hr, lr = _lr_pair(root, args.lr_root, lr_size)
    out = Path(args.out)
    # the dataset fixes the class count and image side; every other field must match the teacher
    student_cfg = replace(cfg.model, num_classes=len(hr.class_names), input_side=hr.side)
    res = train_student(lr, hr, teacher, cfg.distill, cfg.train, sr, student_cfg=student_cfg,
                        out_dir=out, resume=args.resume)
    (out / "student.config").write_text(dump_config_text(cfg))
    for p in (res.checkpoint, res.metrics, out / "student.config"):
        manifest.output(p)
    _log(f"student: best val top-1 {res.best_val_acc:.4f} at epoch {res.best_epoch}; saved {res.checkpoint}")
    return EXIT_OK


def cmd_eval(args, manifest: Manifest) -> int:
    from .checkpoint import load_model
    from .data import load_dataset
    from .training import evaluate_top1

    cfg = _run_config(args)
    manifest.config(cfg)
    model, ckpt = load_model(_require_file(args.ckpt, "checkpoint"))
    root = _require_dir(args.data_root, "data root")
    kind = ckpt.metadata.get("kind", "teacher")
    if kind == "student":
        sr = _sr_from(cfg, ckpt)
        _, ds = _lr_pair(root, args.lr_root, model.config.input_side // sr.scale)
    else:
        sr, ds = None, load_dataset(root)
    acc = evaluate_top1(model, ds, sr, cfg.train.eval_batch_size)
    summary = {"checkpoint": str(args.ckpt), "kind": kind, "data_root": str(root), "n": len(ds), "top1": acc}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(summary, indent=2, sort_keys=True))
        manifest.output(out)
    _log(f"top1 {acc:.6f}")
    return EXIT_OK


def _parse_magnitude(text: str) -> float:
    suffixes = {"k": 1e3, "m": 1e6, "g": 1e9}
    t = text.strip().lower()
    try:
        if t and t[-1] in suffixes:
            return float(t[:-1]) * suffixes[t[-1]]
        return float(t)
    except ValueError as exc:
        raise UsageError(f"cannot parse magnitude {text!r}") from exc


def cmd_audit(args, manifest: Manifest) -> int:
    from .network import flops_estimate, param_count

    cfg = _run_config(args)
    manifest.config(cfg)
    params, flops = param_count(cfg.model), flops_estimate(cfg.model)
    report = {"params": params, "params_m": params / 1e6, "flops": flops, "flops_g": flops / 1e9}
    _log(f"params {params} ({params / 1e6:.3f} M)")
    _log(f"flops  {flops:.0f} ({flops / 1e9:.3f} G)")
    failed = []
    for key, expect, tol, value in (("params", args.expect_params, args.params_tol, params),
                                    ("flops", args.expect_flops, args.flops_tol, flops)):
        if expect is None:
            continue
        target = _parse_magnitude(expect)
        ok = abs(value - target) <= tol * abs(target)
        report[f"{key}_gate"] = {"expected": target, "tolerance": tol, "passed": ok}
        _log(f"{key} gate: expected {target:.6g} +/- {tol:.0%}: {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(key)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
        manifest.output(args.out)
    if failed:
        raise GateFailure(f"audit gate failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_gradcheck(args, manifest: Manifest) -> int:
    from .checks import gradient_suite

    cfg = _run_config(args)
    manifest.config(cfg)
    results = gradient_suite(seed=cfg.train.seed, include_full_loss=not args.skip_full_loss)
    for r in results:
        _log(f"{r.component:32s} {r.error:.3e}  (tol {r.tolerance:.0e})  {'ok' if r.passed else 'FAIL'}")
    bad = [r.component for r in results if not r.passed]
    if bad:
        raise GateFailure(f"gradient check failed for: {', '.join(bad)}")
    return EXIT_OK


def _load_pair(args):
    from .data import load_dataset

    train = load_dataset(_require_dir(args.data_root, "data root"))
    test = load_dataset(_require_dir(args.test_root, "test root"))
    if train.class_names != test.class_names:
        raise ContractError("train and test datasets have different classes")
    return train, test


def cmd_sweep_beta(args, manifest: Manifest) -> int:
    from .checkpoint import load_model
    from .training import sweep_beta, train_teacher

    cfg = _run_config(args)
    manifest.config(cfg)
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError as exc:
        raise UsageError(f"--betas must be comma-separated numbers, got {args.betas!r}") from exc
    train, test = _load_pair(args)
    out = Path(args.out)
    if args.teacher_ckpt:
        teacher, _ = load_model(_require_file(args.teacher_ckpt, "teacher checkpoint"))
    else:
        model_cfg = replace(cfg.model, num_classes=len(train.class_names), input_side=train.side)
        teacher = train_teacher(train, model_cfg, cfg.train, out).model
    sr = _sr_from(cfg)
    rows = sweep_beta(train, test, teacher.config.input_side // sr.scale, teacher, cfg.train, betas,
                      cfg.distill, sr, out / "beta_sweep.csv", log=_log)
    manifest.output(out / "beta_sweep.csv")
    if not all(r["finite"] for r in rows):
        raise GateFailure("non-finite loss during the beta sweep")
    return EXIT_OK


def cmd_ablation(args, manifest: Manifest) -> int:
    from .checkpoint import load_model
    from .training import run_ablation

    cfg = _run_config(args)
    manifest.config(cfg)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from exc
    train, test = _load_pair(args)
    teacher = load_model(_require_file(args.teacher_ckpt, "teacher checkpoint"))[0] if args.teacher_ckpt else None
    model_cfg = replace(cfg.model, num_classes=len(train.class_names), input_side=train.side)
    sr = _sr_from(cfg)
    out = Path(args.out)
    summary = run_ablation(train, test, model_cfg.input_side // sr.scale, model_cfg, cfg.train, seeds,
                           cfg.distill, sr=sr, out_dir=out, teacher=teacher, log=_log)
    manifest.output(out / "ablation.json")
    for arm, acc in summary["mean"].items():
        _log(f"{arm:12s} mean top-1 {acc:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--profile", choices=("toy", "paper"), help="base profile (overrides the file's)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--deterministic", action="store_true", help="force single-threaded execution")
    if seed:
        p.add_argument("--seed", type=int, help="override train.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vimd", description="Distilled ViM classification on low-resolution images.")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-toy", help="write the bundled 4-class texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=150)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy, manifest_dir=lambda a: Path(a.out))

    p = sub.add_parser("synth-lr", help="bicubic LR cache mirroring an HR dataset tree")
    p.add_argument("--data-root", required=True)
    p.add_argument("--size", type=int, default=56)
    p.add_argument("--out", help="cache directory (default <root>_lr<size>)")
    p.set_defaults(func=cmd_synth_lr,
                   manifest_dir=lambda a: Path(a.out) if a.out else Path(f"{a.data_root.rstrip('/')}_lr{a.size}"))

    p = sub.add_parser("train-teacher", help="cross-entropy training on HR images")
    _common(p)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_teacher, manifest_dir=lambda a: Path(a.out))

    p = sub.add_parser("train-student", help="distillation training on LR images")
    _common(p)
    p.add_argument("--data-root", required=True, help="HR training tree")
    p.add_argument("--lr-root", help="LR cache tree (default <data-root>_lr<size>, else synthesised)")
    p.add_argument("--teacher-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-ld", action="store_true", help="disable logits distillation")
    p.add_argument("--no-hsd", action="store_true", help="disable hidden-state distillation")
    p.add_argument("--beta", type=float)
    p.add_argument("--fine-tune-sr", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_student, manifest_dir=lambda a: Path(a.out))

    p = sub.add_parser("eval", help="top-1 accuracy of a teacher or student checkpoint")
    _common(p)
    p.add_argument("--ckpt", "--teacher-ckpt", dest="ckpt", required=True)
    p.add_argument("--data-root", required=True, help="HR test tree")
    p.add_argument("--lr-root")
    p.add_argument("--out", help="JSON summary path")
    p.set_defaults(func=cmd_eval, manifest_dir=lambda a: Path(a.out).parent if a.out else Path(a.ckpt).parent)

    p = sub.add_parser("audit", help="parameter count and FLOPs estimate")
    _common(p, seed=False)
    p.add_argument("--expect-params")
    p.add_argument("--expect-flops")
    p.add_argument("--params-tol", type=float, default=0.05)
    p.add_argument("--flops-tol", type=float, default=0.25)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_audit, manifest_dir=lambda a: Path(a.out).parent if a.out else None)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--skip-full-loss", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck, manifest_dir=lambda a: Path(a.out) if a.out else None)

    p = sub.add_parser("sweep-beta", help="full-loss students over several beta values")
    _common(p)
    p.add_argument("--data-root", required=True)
    p.add_argument("--test-root", required=True)
    p.add_argument("--teacher-ckpt")
    p.add_argument("--betas", default="1,10,20,30")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_beta, manifest_dir=lambda a: Path(a.out))

    p = sub.add_parser("ablation", help="CE / CE+LD / CE+LD+HSD students over several seeds")
    _common(p, seed=False)
    p.add_argument("--data-root", required=True)
    p.add_argument("--test-root", required=True)
    p.add_argument("--teacher-ckpt")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablation, manifest_dir=lambda a: Path(a.out))
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, GateFailure):
        return EXIT_GATE
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    return EXIT_CONTRACT


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = Manifest(args.command, argv)
    code = EXIT_OK
    with ExitStack() as stack:
        try:
            limit = _thread_limit(args)
            if limit is not None:
                from threadpoolctl import threadpool_limits

                stack.enter_context(threadpool_limits(limits=limit))
            code = args.func(args, manifest)
        except VimdError as exc:
            code = _exit_code(exc)
            print(f"error: {exc}", file=sys.stderr)
        except (OSError, ValueError) as exc:
            code = EXIT_CONTRACT
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    out_dir = args.manifest_dir(args)
    if out_dir is not None and (code == EXIT_OK or out_dir.exists()):
        manifest.write(out_dir, "ok" if code == EXIT_OK else f"exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())

import json
import subprocess
import sys

import numpy as np
import pytest

from vimd.checkpoint import load_model
from vimd.cli import main
from vimd.data import load_dataset
from vimd.network import TOY, param_count
from vimd.sr import SrGenerator
from vimd.training import evaluate_top1, read_metrics

TINY = ["--set", "model.embed_dim=8", "--set", "model.depth=1", "--set", "model.d_state=4",
        "--set", "train.epochs=1", "--set", "train.teacher_epochs=2", "--set", "train.batch_size=8",
        "--set", "sr.mode=bicubic", "--deterministic"]


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    assert main(["make-toy", "--out", str(root), "--n-train", "6", "--n-test", "3", "--side", "32"]) == 0
    return root


@pytest.fixture(scope="module")
def teacher_dir(toy_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("teacher")
    assert main(["train-teacher", "--data-root", str(toy_root / "train"), "--out", str(out)] + TINY) == 0
    return out


def test_unknown_command_and_missing_flags(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["eval"]) == 1
    assert main(["audit", "--set", "nonsense"]) == 1
    assert "error" in capsys.readouterr().err


def test_audit_gates(capsys, tmp_path):
    assert main(["audit", "--profile", "paper", "--expect-params", "6.99M"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["audit", "--profile", "paper", "--expect-params", "1k"]) == 3
    assert main(["audit", "--profile", "paper", "--expect-params", "lots"]) == 1
    report = tmp_path / "audit.json"
    assert main(["audit", "--profile", "toy", "--out", str(report)]) == 0
    assert json.loads(report.read_text())["params"] == param_count(TOY)
    assert (tmp_path / "audit.manifest.json").is_file()


def test_bad_config_inputs(tmp_path, monkeypatch):
    assert main(["audit", "--config", str(tmp_path / "nope.cfg")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.epochs = -3\n")
    assert main(["audit", "--config", str(bad)]) == 1
    monkeypatch.setenv("VIMD_THREADS", "many")
    assert main(["audit"]) == 1


def test_synth_lr_twice(toy_root, capsys):
    root = str(toy_root / "test")
    assert main(["synth-lr", "--data-root", root, "--size", "8"]) == 0
    assert "12 written" in capsys.readouterr().out
    assert main(["synth-lr", "--data-root", root, "--size", "8"]) == 0
    assert "0 written, 12 unchanged" in capsys.readouterr().out
    assert main(["synth-lr", "--data-root", root + "_missing", "--size", "8"]) == 1


def test_teacher_outputs_and_manifest(teacher_dir):
    for name in ("teacher.ckpt", "teacher.last.ckpt", "teacher.metrics.csv", "teacher.config",
                 "train-teacher.manifest.json"):
        assert (teacher_dir / name).is_file()
    manifest = json.loads((teacher_dir / "train-teacher.manifest.json").read_text())
    assert manifest["command"] == "train-teacher" and manifest["status"] == "ok"
    assert manifest["config"]["model"]["embed_dim"] == 8
    assert manifest["seed"] == 0 and manifest["version"]
    assert len(read_metrics(teacher_dir / "teacher.metrics.csv")) == 2


def test_eval_delegates_to_evaluate_top1(teacher_dir, toy_root, capsys, tmp_path):
    summary = tmp_path / "eval.json"
    assert main(["eval", "--ckpt", str(teacher_dir / "teacher.ckpt"), "--data-root", str(toy_root / "test"),
                 "--out", str(summary)]) == 0
    printed = float(capsys.readouterr().out.split()[-1])
    model, _ = load_model(teacher_dir / "teacher.ckpt")
    expected = evaluate_top1(model, load_dataset(toy_root / "test"))
    assert printed == pytest.approx(expected, abs=1e-6)
    assert json.loads(summary.read_text())["top1"] == expected
    assert 0.0 <= expected <= 1.0


def test_student_ce_only_and_eval(teacher_dir, toy_root, tmp_path, capsys):
    out = tmp_path / "student"
    assert main(["train-student", "--data-root", str(toy_root / "train"), "--teacher-ckpt",
                 str(teacher_dir / "teacher.ckpt"), "--out", str(out), "--no-ld", "--no-hsd"] + TINY) == 0
    rows = read_metrics(out / "student.metrics.csv")
    assert all(r["l_total"] == r["l_ce"] and r["l_ld"] == 0 and r["l_hsd"] == 0 for r in rows)
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(out / "student.ckpt"), "--data-root", str(toy_root / "test")] + TINY) == 0
    printed = float(capsys.readouterr().out.split()[-1])
    model, _ = load_model(out / "student.ckpt")
    lr = load_dataset(toy_root / "test").downsample(8)
    assert printed == pytest.approx(evaluate_top1(model, lr, SrGenerator(mode="bicubic")), abs=1e-6)


def test_student_config_must_match_teacher(teacher_dir, toy_root, tmp_path, capsys):
    code = main(["train-student", "--data-root", str(toy_root / "train"), "--teacher-ckpt",
                 str(teacher_dir / "teacher.ckpt"), "--out", str(tmp_path / "s")] + TINY
                + ["--set", "model.embed_dim=16"])
    assert code == 2
    assert "embed_dim" in capsys.readouterr().err
    assert not (tmp_path / "s" / "student.metrics.csv").exists()


def test_checkpoint_errors(teacher_dir, toy_root, tmp_path):
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes((teacher_dir / "teacher.ckpt").read_bytes()[:100])
    assert main(["eval", "--ckpt", str(broken), "--data-root", str(toy_root / "test")]) == 2
    assert main(["eval", "--ckpt", str(tmp_path / "absent.ckpt"), "--data-root", str(toy_root / "test")]) == 1


def test_sweep_beta_rows(teacher_dir, toy_root, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep-beta", "--data-root", str(toy_root / "train"), "--test-root", str(toy_root / "test"),
                 "--teacher-ckpt", str(teacher_dir / "teacher.ckpt"), "--betas", "1,10,20,30",
                 "--out", str(out)] + TINY) == 0
    lines = (out / "beta_sweep.csv").read_text().splitlines()
    assert lines[0] == "beta,top1,final_l_total,finite"
    assert [float(l.split(",")[0]) for l in lines[1:]] == [1.0, 10.0, 20.0, 30.0]
    assert all(np.isfinite(float(l.split(",")[2])) for l in lines[1:])
    assert main(["sweep-beta", "--data-root", str(toy_root / "train"), "--test-root", str(toy_root / "test"),
                 "--betas", "1,x", "--out", str(out)]) == 1


def test_ablation_command(teacher_dir, toy_root, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablation", "--data-root", str(toy_root / "train"), "--test-root", str(toy_root / "test"),
                 "--teacher-ckpt", str(teacher_dir / "teacher.ckpt"), "--seeds", "0", "--out", str(out)] + TINY) == 0
    summary = json.loads((out / "ablation.json").read_text())
    assert set(summary["runs"]) == {"ce", "ce+ld", "ce+ld+hsd"}
    assert (out / "ablation.manifest.json").is_file()


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--skip-full-loss"]) == 0
    out = capsys.readouterr().out
    assert "selective_scan" in out and "FAIL" not in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "vimd", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()

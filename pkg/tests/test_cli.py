import json
import os
import subprocess
import sys

import pytest

from neckbench.cli import main

PY = sys.executable


def run_cli(args):
    return main(list(args))


def test_help_exits_zero():
    proc = subprocess.run([PY, "-m", "neckbench.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "demo-gen" in proc.stdout


@pytest.mark.parametrize("cmd", ["serve", "demo-gen", "train", "eval", "compare", "replay"])
def test_subcommand_help(cmd):
    proc = subprocess.run([PY, "-m", "neckbench.cli", cmd, "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0


def test_usage_error_exit_code_1():
    assert run_cli(["demo-gen"]) == 1  # missing required flags
    assert run_cli(["no-such-command"]) == 1


def test_io_error_exit_code_3(tmp_path):
    assert run_cli(["replay", "--episode", str(tmp_path / "missing.ep.jsonl")]) == 3


def test_demo_gen_deterministic_and_replay_verifies(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert run_cli(["demo-gen", "--task", "CRange", "--count", "1",
                    "--seed", "7", "--out", str(out1)]) == 0
    assert run_cli(["demo-gen", "--task", "CRange", "--count", "1",
                    "--seed", "7", "--out", str(out2)]) == 0
    f1 = out1 / "CRange_00007.ep.jsonl"
    f2 = out2 / "CRange_00007.ep.jsonl"
    assert f1.read_bytes() == f2.read_bytes()
    assert run_cli(["replay", "--episode", str(f1), "--verify"]) == 0


def test_replay_verify_detects_corruption(tmp_path):
    out = tmp_path / "d"
    assert run_cli(["demo-gen", "--task", "CRange", "--count", "1",
                    "--seed", "3", "--out", str(out)]) == 0
    path = out / "CRange_00003.ep.jsonl"
    lines = path.read_text().splitlines()
    step = json.loads(lines[5])
    step["neck_q"][0] += 1e-9
    lines[5] = json.dumps(step, sort_keys=True)
    path.write_text("\n".join(lines) + "\n")
    assert run_cli(["replay", "--episode", str(path), "--verify"]) == 2


def test_train_eval_compare_smoke(tmp_path):
    # tiny end-to-end: few episodes, few epochs; exercises files and reports
    data = tmp_path / "demos"
    assert run_cli(["demo-gen", "--task", "CRange", "--count", "3",
                    "--seed", "0", "--out", str(data)]) == 0
    manifest = str(data / "manifest.json")
    act = tmp_path / "act.params"
    stat = tmp_path / "stat.params"
    report = tmp_path / "report"
    assert run_cli(["train", "--dataset", manifest, "--variant", "actuated",
                    "--out", str(act), "--epochs", "2",
                    "--report-dir", str(report)]) == 0
    assert run_cli(["train", "--dataset", manifest, "--variant", "static",
                    "--out", str(stat), "--epochs", "2",
                    "--report-dir", str(report)]) == 0
    assert (report / "loss_actuated.csv").exists()
    assert (report / "loss_actuated.png").exists()
    assert (report / "train_manifest_actuated.json").exists()

    assert run_cli(["eval", "--params", str(act), "--task", "CRange",
                    "--trials", "2", "--report-dir", str(report / "eval"),
                    "--format", "json"]) == 0
    assert (report / "eval" / "eval.csv").exists()
    assert (report / "eval" / "eval.png").exists()

    assert run_cli(["compare", "--actuated", str(act), "--static", str(stat),
                    "--tasks", "CRange", "--trials", "2",
                    "--report-dir", str(report / "cmp"), "--format", "json"]) == 0
    assert (report / "cmp" / "compare.csv").exists()
    assert (report / "cmp" / "compare.json").exists()
    assert (report / "cmp" / "compare.png").exists()
    data_json = json.loads((report / "cmp" / "compare.json").read_text())
    assert len(data_json["rows"]) == 1
    assert set(data_json["rows"][0]) == {"task", "actuated", "static"}


def test_compare_rejects_swapped_variants(tmp_path):
    data = tmp_path / "demos"
    assert run_cli(["demo-gen", "--task", "CRange", "--count", "2",
                    "--seed", "0", "--out", str(data)]) == 0
    manifest = str(data / "manifest.json")
    act = tmp_path / "act.params"
    assert run_cli(["train", "--dataset", manifest, "--variant", "actuated",
                    "--out", str(act), "--epochs", "1"]) == 0
    assert run_cli(["compare", "--actuated", str(act), "--static", str(act),
                    "--trials", "1"]) == 1

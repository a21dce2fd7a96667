"""Command-line surface tests: exit codes, artifacts, and log formats."""

import csv
import json
import subprocess
import sys

import pytest

from forgelab.cli import run_command
from forgelab.llm_client import mock_server
from forgelab.numnn.checkpoint import load_checkpoint


def test_usage_error_exits_2():
    proc = subprocess.run([sys.executable, "-m", "forgelab.cli", "bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "forgelab.cli"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_eval_requires_input_selector():
    with pytest.raises(SystemExit) as exc:
        run_command(["eval"])
    assert exc.value.code == 2


def test_runtime_error_exits_1(capsys):
    rc = run_command(["eval", "--manifest", "/nonexistent/manifest.jsonl"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_simulate_and_eval_round_trip(tmp_path, capsys):
    out = tmp_path / "ds"
    assert run_command(["--seed", "3", "simulate", "--count", "8",
                        "--out", str(out), "--toy-sources", "4"]) == 0
    capsys.readouterr()
    report_path = tmp_path / "metrics.json"
    assert run_command(["eval", "--manifest", str(out),
                        "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert {"auc", "ap", "dice_mean", "iou_mean", "n_videos",
            "n_frames"} <= set(report)
    assert 0.0 <= report["auc"] <= 1.0
    assert report["n_videos"] == 8


def test_train_kfd_artifacts(tmp_path, capsys):
    ckpt = tmp_path / "kfd.ckpt"
    log = tmp_path / "loss.csv"
    rc = run_command(["--seed", "1", "train-kfd", "--steps", "3", "--count", "4",
                      "--out", str(ckpt), "--log", str(log)])
    assert rc == 0
    capsys.readouterr()
    tensors = load_checkpoint(ckpt)
    assert any(n.startswith("loc/") for n in tensors)
    with open(log) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "l_loc", "l_cls", "l_llm", "total"]
    assert len(rows) == 4


def test_train_llm_descends(tmp_path, capsys):
    log = tmp_path / "llm.csv"
    rc = run_command(["--seed", "0", "train-llm", "--steps", "4", "--count", "2",
                      "--log", str(log)])
    assert rc == 0
    capsys.readouterr()
    with open(log) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    assert all(float(r["l_llm"]) > 0 for r in rows)


def test_eval_videos_protocol(tmp_path, capsys, monkeypatch):
    videos = tmp_path / "videos.jsonl"
    videos.write_text(
        json.dumps({"video_id": "vf", "frame_count": 4, "label": 1}) + "\n"
        + json.dumps({"video_id": "vr", "frame_count": 4, "label": 0}) + "\n")
    # scripted replies: 4 fake frames for the first video, then all real
    script = ["Yes. This is a deepfake image."] * 4 + ["No. Real image."]
    with mock_server(script) as server:
        monkeypatch.setenv("FORGELAB_LLM_ENDPOINT", server.endpoint)
        assert run_command(["eval", "--videos", str(videos)]) == 0
        report = json.loads(capsys.readouterr().out)
    assert report["auc"] == 1.0
    assert report["video_scores"] == {"vf": 1.0, "vr": 0.0}
    assert report["n_frames"] == 8


def test_eval_videos_without_endpoint_fails(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("FORGELAB_LLM_ENDPOINT", raising=False)
    videos = tmp_path / "v.jsonl"
    videos.write_text(json.dumps({"video_id": "v", "frame_count": 1,
                                  "label": 1}) + "\n")
    assert run_command(["eval", "--videos", str(videos)]) == 1


def test_gradcheck_command(capsys):
    assert run_command(["--seed", "0", "gradcheck"]) == 0
    assert "gradient check passed" in capsys.readouterr().out


def test_seed_flag_overrides_config(tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run_command(["--seed", "9", "simulate", "--count", "3",
                        "--out", str(a), "--toy-sources", "2"]) == 0
    assert run_command(["--seed", "9", "simulate", "--count", "3",
                        "--out", str(b), "--toy-sources", "2"]) == 0
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()

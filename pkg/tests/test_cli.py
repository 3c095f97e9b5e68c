import json
import subprocess
import sys

import numpy as np
import pytest

from vidinsert.codec import read_video, write_video
from vidinsert.config import save_config
from vidinsert.synth import load_manifest

from conftest import tiny_run_config


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "vidinsert.cli", *map(str, args)],
        capture_output=True,
        text=True,
        timeout=600,
    )


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """synth -> train once; later commands reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    out = run_cli("synth", "--count", 3, "--seed", 5, "--out", data,
                  "--height", 16, "--width", 16, "--frames", 5)
    assert out.returncode == 0, out.stderr
    cfg_path = root / "run.ini"
    save_config(tiny_run_config(max_steps=2), cfg_path)
    run_dir = root / "run"
    out = run_cli("train", "--config", cfg_path, "--data", data / "manifest.jsonl",
                  "--out", run_dir)
    assert out.returncode == 0, out.stderr
    return root


def test_synth_writes_valid_manifest(cli_workspace):
    records = load_manifest(cli_workspace / "data" / "manifest.jsonl")
    assert len(records) == 3


def test_train_emits_loss_curve(cli_workspace):
    lines = (cli_workspace / "run" / "loss.csv").read_text().strip().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 3


def test_edit_round_trip(cli_workspace):
    record = load_manifest(cli_workspace / "data" / "manifest.jsonl")[0]
    data = cli_workspace / "data"
    out_path = cli_workspace / "edited.vid"
    result = run_cli(
        "edit",
        "--ckpt", cli_workspace / "run" / "checkpoint_final.ckpt",
        "--cond", data / record.cond,
        "--ref", data / record.ref,
        "--mask", data / record.mask,
        "--prompt", record.prompt,
        "--steps", 2, "--seed", 11,
        "--out", out_path,
    )
    assert result.returncode == 0, result.stderr
    video = read_video(out_path)
    assert video.shape == (5, 3, 16, 16)


def test_eval_reports_table_and_json(cli_workspace, tmp_path):
    data = cli_workspace / "data"
    records = load_manifest(data / "manifest.jsonl")
    gen, tgt = tmp_path / "gen", tmp_path / "tgt"
    prompts_path = tmp_path / "prompts.jsonl"
    with open(prompts_path, "w") as fh:
        for record in records:
            video = read_video(data / record.target)
            stem = f"{record.id:04d}"
            write_video(gen / f"{stem}.vid", video)
            write_video(tgt / f"{stem}.vid", video)
            fh.write(json.dumps({"id": stem, "prompt": record.prompt}) + "\n")
    report_path = tmp_path / "report.json"
    result = run_cli("eval", "--gen", gen, "--target", tgt,
                     "--prompts", prompts_path, "--out", report_path)
    assert result.returncode == 0, result.stderr
    assert "FID" in result.stdout and "CLIP-T" in result.stdout
    report = json.loads(report_path.read_text())
    assert report["fid"] <= 1e-4


def test_eval_unmatched_ids_exit_code(tmp_path):
    video = np.zeros((2, 3, 4, 4), dtype=np.float32)
    write_video(tmp_path / "gen" / "a.vid", video)
    write_video(tmp_path / "tgt" / "b.vid", video)
    prompts = tmp_path / "p.jsonl"
    prompts.write_text('{"id": "a", "prompt": "x"}\n')
    result = run_cli("eval", "--gen", tmp_path / "gen", "--target", tmp_path / "tgt",
                     "--prompts", prompts, "--out", tmp_path / "r.json")
    assert result.returncode != 0
    assert result.stderr.strip().startswith("contract-error:")


def test_edit_missing_checkpoint_io_error(tmp_path):
    result = run_cli("edit", "--ckpt", tmp_path / "nope.ckpt",
                     "--cond", tmp_path / "c.vid", "--prompt", "x",
                     "--seed", 0, "--out", tmp_path / "o.vid")
    assert result.returncode != 0
    category = result.stderr.strip().split(":")[0]
    assert category in ("io-error", "contract-error")


def test_grad_check_single_seed():
    result = run_cli("grad-check", "--seeds", 1)
    assert result.returncode == 0, result.stdout + result.stderr
    assert "model_loss" in result.stdout
    assert "FAIL" not in result.stdout

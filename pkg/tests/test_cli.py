"""Command-line workflow on a tiny configuration, exit codes and file formats."""
import re

import numpy as np
import pytest

from dualstream import checkpoint as ckpt
from dualstream import gradcheck
from dualstream.cli import main
from dualstream.config import render_config
from dualstream.media import read_frames, read_manifest

from conftest import tiny_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Config, codec, model and embedder produced through the command line."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(render_config(tiny_config()))
    assert main(["train-codec", "--config", str(cfg), "--out", str(root / "codec.dsdn")]) == 0
    assert main(["train", "--config", str(cfg), "--codec", str(root / "codec.dsdn"),
                 "--out", str(root / "model.dsdn"), "--log", str(root / "train.log")]) == 0
    assert main(["train-embedder", "--config", str(cfg), "--out", str(root / "emb.dsdn")]) == 0
    return root


def test_data_gen(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("frames = 3\nimage_size = 32\n")
    assert main(["data", "gen", "--config", str(cfg), "--out", str(tmp_path / "d"), "--n", "2"]) == 0
    clips = sorted(p for p in (tmp_path / "d").iterdir() if p.is_dir())
    assert len(clips) == 2
    assert read_frames(clips[0]).shape == (3, 3, 32, 32)
    manifest = read_manifest(tmp_path / "d" / "manifest.json")
    assert manifest["clips"] == 2 and manifest["corpus_hash"] in capsys.readouterr().out


def test_training_log_lines(workdir):
    lines = (workdir / "train.log").read_text().splitlines()
    assert len(lines) == tiny_config().steps
    assert all(re.fullmatch(r"\d+ \S+ \S+ \S+", line) for line in lines)


def test_sample_twice_gives_identical_files(workdir):
    outs = []
    for name in ("a", "b"):
        out = workdir / f"sample_{name}"
        assert main(["sample", "--checkpoint", str(workdir / "model.dsdn"),
                     "--prompt", "a red square moving up", "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == [f"frame_{k:03d}.ppm" for k in range(4)] + ["manifest.json"]
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_ablate_records_the_disabled_component(workdir):
    out = workdir / "ablated"
    assert main(["ablate", "--checkpoint", str(workdir / "model.dsdn"), "--prompt", "a blue circle moving left",
                 "--disable", "motion_stream", "--out", str(out)]) == 0
    assert read_manifest(out / "manifest.json")["disabled"] == "motion_stream"


def test_eval_output_format(workdir, capsys):
    out = workdir / "eval_me"
    main(["sample", "--checkpoint", str(workdir / "model.dsdn"), "--prompt", "a green square moving down",
          "--out", str(out)])
    capsys.readouterr()
    assert main(["eval", "--embedder", str(workdir / "emb.dsdn"), str(out), str(out)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 3
    assert re.fullmatch(r"eval_me -?\d\.\d{6} -?\d\.\d{6}", rows[0])
    assert rows[2].startswith("mean ")


def test_resume_continues_to_the_target_step(workdir, tmp_path):
    target = tmp_path / "more.dsdn"
    target.write_bytes((workdir / "model.dsdn").read_bytes())
    assert main(["train", "--resume", str(target), "--out", str(target), "--steps", "6",
                 "--log", str(tmp_path / "log")]) == 0
    assert int(ckpt.load(target)["meta.step"]) == 6
    assert [l.split()[0] for l in (tmp_path / "log").read_text().splitlines()] == ["4", "5"]


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["sample"]) == 1
    assert main(["frobnicate"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("T = 0\n")
    assert main(["data", "gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "bad.cfg:1" in capsys.readouterr().err


def test_learned_codec_requires_codec_argument(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(render_config(tiny_config()))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "m.dsdn")]) == 1


def test_runtime_errors_exit_two(tmp_path, capsys):
    junk = tmp_path / "junk.dsdn"
    junk.write_bytes(b"not a checkpoint")
    assert main(["sample", "--checkpoint", str(junk), "--prompt", "a red square moving up",
                 "--out", str(tmp_path / "o")]) == 2
    assert "bad magic" in capsys.readouterr().err
    assert main(["sample", "--checkpoint", str(tmp_path / "missing.dsdn"), "--prompt", "x",
                 "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("worst,code", [(1e-7, 0), (1e-2, 2)])
def test_gradcheck_reports_and_exit_code(monkeypatch, capsys, worst, code):
    monkeypatch.setattr(gradcheck, "run_kernel_suite", lambda seeds: {"matmul": 1e-9})
    monkeypatch.setattr(gradcheck, "check_networks", lambda: {"content_unet.input": worst})
    assert main(["gradcheck", "--seeds", "1"]) == code
    out = capsys.readouterr().out
    assert re.search(r"^matmul\s+1\.000e-09 ok$", out, re.M)
    assert f"max relative error {worst:.3e}" in out

import subprocess
import sys

import numpy as np
import pytest

from helpers import zero_params
from twostage_denoise.checkpoint import load_checkpoint, restore_params, save_checkpoint
from twostage_denoise.cli import TRAIN_OPTIONS, main, read_config_file
from twostage_denoise.data import load_image, save_image
from twostage_denoise.network import ModelConfig, build, param_count

TOY_CONFIG = """# tiny model for smoke runs
k = 1
m = 0
width = 16
growth = 8
patch = 24
batch = 2
lr = 1e-3
log-every = 50
checkpoint_every = 100
"""


def run(*argv):
    return main([str(a) for a in argv])


def test_missing_data_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run("train", "--out", tmp_path / "x.ckpt")
    assert e.value.code == 1
    assert "--data" in capsys.readouterr().err


def test_unknown_subcommand_and_bad_values(tmp_path):
    with pytest.raises(SystemExit) as e:
        run("frobnicate")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run("train", "--data", tmp_path, "--out", tmp_path / "x", "--loss", "l1")
    assert e.value.code == 1


def test_defaults_follow_published_setup():
    assert TRAIN_OPTIONS["sigma_min"][1] == 0 and TRAIN_OPTIONS["sigma_max"][1] == 50
    assert TRAIN_OPTIONS["batch"][1] == 4 and TRAIN_OPTIONS["patch"][1] == 128
    assert TRAIN_OPTIONS["iters"][1] == 500_000 and TRAIN_OPTIONS["lr_period"][1] == 100_000


def test_config_file_parsing(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text(TOY_CONFIG)
    cfg = read_config_file(f)
    assert cfg["width"] == "16" and cfg["log_every"] == "50"
    f.write_text("bogus = 1\n")
    assert run("train", "--data", tmp_path, "--out", tmp_path / "o", "--config", f) == 1


def test_train_toy_directory_and_flag_precedence(image_dir, tmp_path, capsys):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(TOY_CONFIG + "seed = 9\n")
    out = tmp_path / "toy.ckpt"
    code = run("train", "--data", image_dir, "--out", out, "--config", cfg, "--iters", 200, "--seed", 4)
    assert code == 0
    ckpt = load_checkpoint(out)
    assert ckpt.iteration == 200 and ckpt.config == ModelConfig(k=1, m=0, width=16, growth=8)
    assert ckpt.rng == {"seed": 4}  # flag beat the file
    assert ckpt.optimizer.t == 200
    rows = (tmp_path / "toy.ckpt.log").read_text().splitlines()
    assert [int(r.split(",")[0]) for r in rows] == [0, 50, 100, 150, 199]
    assert "trained to iteration 200" in capsys.readouterr().out

    # info prints the parameter count
    assert run("info", "--ckpt", out) == 0
    assert f"param_count = {ckpt.param_count()}" in capsys.readouterr().out


def test_train_rejects_patch_larger_than_images(image_dir, tmp_path, capsys):
    code = run("train", "--data", image_dir, "--out", tmp_path / "o", "--iters", 1, "--patch", 512,
               "--k", 1, "--m", 0, "--width", 8, "--growth", 2)
    assert code == 2
    assert "I/O error" in capsys.readouterr().err


def test_add_noise_zero_sigma_is_byte_identical(tmp_path):
    src = tmp_path / "in.png"
    save_image(np.random.default_rng(0).integers(0, 256, (1, 20, 30)) / 255, src)
    assert run("add-noise", "--in", src, "--out", tmp_path / "out.png", "--sigma", 0, "--seed", 1) == 0
    assert (tmp_path / "out.png").read_bytes() == src.read_bytes()
    run("add-noise", "--in", src, "--out", tmp_path / "a.png", "--sigma", 25, "--seed", 1)
    run("add-noise", "--in", src, "--out", tmp_path / "b.png", "--sigma", 25, "--seed", 1)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes() != src.read_bytes()


def test_denoise_dims_zero_model_and_stage1(tmp_path):
    p = zero_params(build(ModelConfig(k=3, m=1, width=8, growth=2), 0))
    save_checkpoint(tmp_path / "z.ckpt", p)
    src = tmp_path / "in.pgm"
    save_image(np.random.default_rng(1).random((1, 13, 22)), src)
    assert run("denoise", "--ckpt", tmp_path / "z.ckpt", "--in", src, "--out", tmp_path / "o.png", "--save-stage1") == 0
    out = load_image(tmp_path / "o.png")
    assert out.shape == (1, 13, 22) and np.all(out.pixels == 0)
    assert load_image(tmp_path / "o_stage1.png").shape == (1, 13, 22)


def test_denoise_channel_mismatch(tmp_path, capsys):
    save_checkpoint(tmp_path / "g.ckpt", build(ModelConfig(k=1, m=0, width=8, growth=2), 0))
    save_image(np.zeros((3, 12, 12)), tmp_path / "rgb.ppm")
    assert run("denoise", "--ckpt", tmp_path / "g.ckpt", "--in", tmp_path / "rgb.ppm", "--out", tmp_path / "o.png") == 1
    assert "3" in capsys.readouterr().err


def test_io_errors_exit_2(tmp_path):
    assert run("info", "--ckpt", tmp_path / "missing.ckpt") == 2
    (tmp_path / "bad.ckpt").write_bytes(b"garbage!" * 4)
    assert run("info", "--ckpt", tmp_path / "bad.ckpt") == 2
    assert run("add-noise", "--in", tmp_path / "none.png", "--out", tmp_path / "o.png", "--sigma", 5) == 2


def test_eval_report(tmp_path, capsys):
    for name in ("a.png", "b.png"):
        save_image(np.random.default_rng(len(name)).random((1, 16, 16)), tmp_path / "ref" / name)
        save_image(np.random.default_rng(len(name)).random((1, 16, 16)), tmp_path / "den" / name)
    assert run("eval", "--denoised", tmp_path / "den", "--reference", tmp_path / "ref", "--report", tmp_path / "r.csv") == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[-1] == "average, 200.0000, 1.000000" and len(lines) == 3
    (tmp_path / "den" / "a.png").unlink()
    assert run("eval", "--denoised", tmp_path / "den", "--reference", tmp_path / "ref") == 2


def test_info_default_model(tmp_path, capsys):
    save_checkpoint(tmp_path / "d.ckpt", build(ModelConfig(), 0))
    assert run("info", "--ckpt", tmp_path / "d.ckpt") == 0
    out = capsys.readouterr().out
    assert "param_count = 5506436" in out and "iteration = 0" in out


def test_gradcheck_without_network_exits_zero(capsys):
    assert run("gradcheck", "--no-network") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "conv2d[im2col;padding=1]" in out and "hdrdam" in out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "twostage_denoise", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()

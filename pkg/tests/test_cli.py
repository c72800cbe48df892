import numpy as np
import pytest

from quadsr import imageio
from quadsr.cli import main
from quadsr.data import SynthSpec, make_pair


@pytest.fixture
def pair_files(tmp_path):
    hr, lr, _ = make_pair(SynthSpec(size=32), 0, 3, np.float64)
    # Quantise to 8 bits first so PNG files hold the exact arrays.
    hr = imageio.to_model(imageio.to_uint8(hr))
    lr = imageio.to_model(imageio.to_uint8(lr))
    imageio.write_image(tmp_path / "hr.png", hr[0])
    imageio.write_image(tmp_path / "lr.png", lr[0])
    return tmp_path, hr


def test_mask_constant_image(tmp_path):
    imageio.write_image(tmp_path / "c.png", np.full((1, 16, 16), 0.2))
    assert main(["mask", "--s", "0.15", str(tmp_path / "c.png")]) == 0
    assert not imageio.read_pbm(tmp_path / "c.pbm").any()
    assert (tmp_path / "c_quadtree.png").exists()


def test_sr_oracle_reproduces_hr(pair_files):
    d, hr = pair_files
    out = d / "sr.png"
    code = main(["sr", str(d / "lr.png"), "--oracle-predictor", "--hr", str(d / "hr.png"), "--out", str(out), "--trajectory", str(d / "traj")])
    assert code == 0
    assert np.array_equal(imageio.read_image(out), imageio.read_image(d / "hr.png"))
    assert len(list((d / "traj").glob("step_*.png"))) == 15


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--thresholds", "0,0.15,0.3,0.6,0.9", "--no-metrics", "--n-images", "4", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "threshold,density,flops_up,flops_down,psnr,ssim"
    dens = [float(line.split(",")[1]) for line in lines[1:]]
    assert len(dens) == 5 and all(a >= b for a, b in zip(dens, dens[1:]))


def test_train_sr_eval_pipeline(tmp_path, pair_files, capsys):
    d, _ = pair_files
    run = tmp_path / "run"
    assert main(["train", "--steps", "2", "--batch", "2", "--out-dir", str(run), "--seed", "1"]) == 0
    ck = run / "final.bin"
    assert main(["sr", str(d / "lr.png"), "--checkpoint", str(ck), "--out", str(d / "a.png"), "--seed", "4"]) == 0
    assert main(["sr", str(d / "lr.png"), "--checkpoint", str(ck), "--out", str(d / "b.png"), "--seed", "4"]) == 0
    assert (d / "a.png").read_bytes() == (d / "b.png").read_bytes()
    capsys.readouterr()
    assert main(["eval", str(d / "a.png"), str(d / "hr.png")]) == 0
    assert "psnr" in capsys.readouterr().out


def test_uhr_bypass(tmp_path):
    imageio.write_image(tmp_path / "big.png", np.random.default_rng(0).uniform(-1, 1, (1, 40, 36)))
    assert main(["uhr", str(tmp_path / "big.png"), "--bypass-model", "--patch", "16", "--stride", "12", "--scale", "2", "--out", str(tmp_path / "o.png")]) == 0
    assert imageio.read_image(tmp_path / "o.png").shape == (1, 80, 72)


def test_seed_env_fallback(tmp_path, pair_files, monkeypatch):
    d, _ = pair_files
    run = tmp_path / "run"
    main(["train", "--steps", "1", "--batch", "1", "--out-dir", str(run)])
    ck = str(run / "final.bin")
    monkeypatch.setenv("QDM_SEED", "11")
    main(["sr", str(d / "lr.png"), "--checkpoint", ck, "--out", str(d / "env.png")])
    monkeypatch.delenv("QDM_SEED")
    main(["sr", str(d / "lr.png"), "--checkpoint", ck, "--out", str(d / "flag.png"), "--seed", "11"])
    assert (d / "env.png").read_bytes() == (d / "flag.png").read_bytes()


def test_exit_codes(tmp_path, monkeypatch):
    assert main(["frobnicate"]) == 1
    assert main(["mask", "--bogus-flag", "x.png"]) == 1
    assert main(["mask", str(tmp_path / "missing.png")]) == 2
    assert main(["sr", str(tmp_path / "missing.png"), "--out", "o.png", "--oracle-predictor"]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nnope = 1\n")
    assert main(["selftest", "--config", str(bad)]) == 1
    monkeypatch.setattr("quadsr.selftest.run_selftest", lambda: False)
    assert main(["selftest"]) == 3


def test_selftest_passes():
    assert main(["selftest"]) == 0

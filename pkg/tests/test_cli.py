import csv
import json

import numpy as np
import pytest
import torch
from filelock import FileLock
from PIL import Image

import rcst.training
from rcst.cli import main
from rcst.config import TrainingConfig, save_config
from rcst.imaging import load_image
from rcst.network import GeneratorSpec
from rcst.training import init_state, save_checkpoint

from .conftest import write_png

TINY = GeneratorSpec(base_channels=8, downsample_factor=2, unet_depth=1)


@pytest.fixture(scope="module")
def tiny_cfg(fixtures_dir):
    return TrainingConfig(
        content_dir=str(fixtures_dir / "content"),
        style_image=str(fixtures_dir / "style.png"),
        crop_size=32,
        batch_size=4,
        epochs=1,
        generator_spec=TINY,
    )


@pytest.fixture(scope="module")
def checkpoint(tiny_cfg, extractor, tmp_path_factory):
    state = init_state(tiny_cfg, extractor)
    return save_checkpoint(state, tmp_path_factory.mktemp("ckpt") / "tiny.pt")


@pytest.fixture
def photo(tmp_path, rng):
    return write_png(tmp_path / "photo.png", rng.integers(0, 256, (37, 50, 3), dtype=np.uint8))


@pytest.fixture
def config_file(tiny_cfg, tmp_path):
    path = tmp_path / "tiny.json"
    save_config(tiny_cfg, path)
    return path


def pixels(path):
    return np.asarray(Image.open(path))


class TestStylize:
    def test_output_keeps_input_size(self, checkpoint, photo, tmp_path):
        out = tmp_path / "out" / "styled.png"
        assert main(["stylize", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "--output", str(out)]) == 0
        assert pixels(out).shape == (37, 50, 3)

    def test_beta_zero_is_shallow_reconstruction(self, checkpoint, tmp_path, rng):
        src = write_png(tmp_path / "in.png", rng.integers(0, 256, (32, 40, 3), dtype=np.uint8))
        out = tmp_path / "shallow.png"
        assert main(["stylize", "--checkpoint", str(checkpoint), "--input", str(src),
                     "--output", str(out), "--alpha", "1", "--beta", "0"]) == 0
        g = rcst.training.load_generator(checkpoint)
        x = load_image(src) * 2 - 1
        with torch.no_grad():
            y = g.decode(g.shallow_path(g.encode_initial(x)))
        expected = torch.round(((y + 1) / 2).clamp(0, 1) * 255).to(torch.uint8)[0].permute(1, 2, 0)
        assert np.array_equal(pixels(out), expected.numpy())

    def test_missing_checkpoint(self, photo, tmp_path):
        out = tmp_path / "never.png"
        assert main(["stylize", "--checkpoint", str(tmp_path / "none.pt"), "--input", str(photo),
                     "--output", str(out)]) == 3
        assert not out.exists()

    def test_corrupt_checkpoint(self, checkpoint, photo, tmp_path):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(checkpoint.read_bytes()[:1000])
        (tmp_path / "bad.json").write_text(checkpoint.with_suffix(".json").read_text())
        assert main(["stylize", "--checkpoint", str(bad), "--input", str(photo),
                     "--output", str(tmp_path / "o.png")]) == 3

    def test_missing_input(self, checkpoint, tmp_path):
        assert main(["stylize", "--checkpoint", str(checkpoint), "--input", str(tmp_path / "x.png"),
                     "--output", str(tmp_path / "o.png")]) == 2

    def test_negative_beta(self, checkpoint, photo, tmp_path):
        assert main(["stylize", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "--output", str(tmp_path / "o.png"), "--beta", "-1"]) == 2


class TestSweep:
    def test_five_betas_and_grid(self, checkpoint, photo, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "--out-dir", str(out), "--grid"]) == 0
        names = sorted(p.name for p in out.glob("*.png"))
        assert names == ["sweep_beta_0.25.png", "sweep_beta_0.5.png", "sweep_beta_0.75.png",
                         "sweep_beta_0.png", "sweep_beta_1.png", "sweep_grid.png"]
        assert pixels(out / "sweep_grid.png").shape == (37, 250, 3)

    def test_without_grid(self, checkpoint, photo, tmp_path):
        assert main(["sweep", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "--out-dir", str(tmp_path), "--betas", "0,1"]) == 0
        assert len(list(tmp_path.glob("sweep_*.png"))) == 2

    @pytest.mark.parametrize("betas", ["1,0.5", "0,0", "", "a,b", "-1,0"])
    def test_bad_beta_lists(self, checkpoint, photo, tmp_path, betas):
        assert main(["sweep", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "--out-dir", str(tmp_path / "s"), f"--betas={betas}"]) == 2
        assert not (tmp_path / "s").exists()


class TestIterate:
    def test_three_iterates(self, checkpoint, photo, tmp_path):
        assert main(["iterate", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "-n", "3", "--out-dir", str(tmp_path)]) == 0
        assert sorted(p.name for p in tmp_path.glob("iterate_*.png")) == [
            "iterate_01.png", "iterate_02.png", "iterate_03.png"]
        with open(tmp_path / "iterate_scores.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [int(r["iterate"]) for r in rows] == [1, 2, 3]
        assert all(-1 <= float(r["edge_preservation"]) <= 1 for r in rows)

    def test_composition_through_files(self, checkpoint, photo, tmp_path):
        assert main(["iterate", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "-n", "2", "--out-dir", str(tmp_path)]) == 0
        again = tmp_path / "again.png"
        assert main(["stylize", "--checkpoint", str(checkpoint), "--input",
                     str(tmp_path / "iterate_01.png"), "--output", str(again)]) == 0
        assert np.array_equal(pixels(again), pixels(tmp_path / "iterate_02.png"))

    def test_n_zero(self, checkpoint, photo, tmp_path):
        assert main(["iterate", "--checkpoint", str(checkpoint), "--input", str(photo),
                     "-n", "0", "--out-dir", str(tmp_path)]) == 2


class TestWeightmap:
    def test_constant_input_is_black(self, tmp_path):
        src = write_png(tmp_path / "flat.png", np.full((12, 12, 3), 90, np.uint8))
        assert main(["weightmap", "--input", str(src), "--output", str(tmp_path / "w.png")]) == 0
        assert np.all(pixels(tmp_path / "w.png") == 0)

    def test_peak_is_white(self, photo, tmp_path):
        assert main(["weightmap", "--input", str(photo), "--output", str(tmp_path / "w.png"),
                     "--blur-sigma", "1.0"]) == 0
        w = pixels(tmp_path / "w.png")
        assert w.ndim == 2 and w.max() == 255

    def test_step_edge_band(self, tmp_path):
        img = np.zeros((8, 8, 3), np.uint8)
        img[:, 4:] = 255
        src = write_png(tmp_path / "step.png", img)
        assert main(["weightmap", "--input", str(src), "--output", str(tmp_path / "w.png"),
                     "--blur-sigma", "0"]) == 0
        expected = np.zeros((8, 8), np.uint8)
        expected[:, 3:5] = 255
        assert np.array_equal(pixels(tmp_path / "w.png"), expected)

    def test_undecodable_input(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"nope")
        assert main(["weightmap", "--input", str(bad), "--output", str(tmp_path / "w.png")]) == 2


class TestEvaluate:
    def test_identity_report(self, fixtures_dir, tmp_path):
        img = str(fixtures_dir / "content" / "camera.png")
        report = tmp_path / "r.json"
        assert main(["evaluate", "--content", img, "--stylized", img, "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        assert data["edge_preservation"] == pytest.approx(1.0, abs=1e-6)
        assert set(data) >= {"edge_preservation", "blank_energy", "detail_energy", "contrast_ratio",
                             "thresholds", "versions"}
        assert data["blank_energy"] == 0 and data["contrast_ratio"] == 0

    def test_degenerate_threshold_reported(self, fixtures_dir, tmp_path):
        img = str(fixtures_dir / "content" / "camera.png")
        report = tmp_path / "r.json"
        assert main(["evaluate", "--content", img, "--stylized", img, "--report", str(report),
                     "--threshold", "1.0"]) == 0
        data = json.loads(report.read_text())
        assert data["contrast_ratio"] is None and "partition_error" in data

    def test_size_mismatch(self, fixtures_dir, tmp_path):
        assert main(["evaluate", "--content", str(fixtures_dir / "content" / "camera.png"),
                     "--stylized", str(fixtures_dir / "content" / "coffee.png"),
                     "--report", str(tmp_path / "r.json")]) == 2


class TestTrain:
    def test_one_epoch(self, config_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--out-dir", str(out)]) == 0
        assert (out / "final.pt").exists() and (out / "epoch_001.pt").exists()
        assert str(out / "final.pt") in capsys.readouterr().out

    def test_resume(self, config_file, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--out-dir", str(out)]) == 0
        assert main(["train", "--config", str(config_file), "--out-dir", str(out),
                     "--resume", str(out / "epoch_001.pt")]) == 0
        with open(out / "loss_log.csv", newline="") as f:
            assert len(list(csv.DictReader(f))) == 2

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"content_dir": "a", "style_image": "b", "learning_rate": 1}))
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.toml")]) == 2

    def test_divergence_exit_code(self, config_file, tmp_path, monkeypatch):
        real = rcst.training.total_loss

        def nan_loss(*args, **kwargs):
            bundle = real(*args, **kwargs)
            bundle.total = bundle.total * float("nan")
            return bundle

        monkeypatch.setattr(rcst.training, "total_loss", nan_loss)
        assert main(["train", "--config", str(config_file), "--out-dir", str(tmp_path / "o")]) == 4

    def test_locked_directory(self, config_file, tmp_path):
        out = tmp_path / "o"
        out.mkdir()
        with FileLock(str(out / ".train.lock")):
            assert main(["train", "--config", str(config_file), "--out-dir", str(out)]) == 3


def test_ablate_bookkeeping(config_file, fixtures_dir, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(config_file), "--out-dir", str(out),
                 "--holdout-dir", str(fixtures_dir / "holdout")]) == 0
    data = json.loads((out / "ablation.json").read_text())
    assert (out / "weighted" / "final.pt").exists() and (out / "unweighted" / "final.pt").exists()
    assert (out / "ablation_grid.png").exists()
    for variant in ("weighted", "unweighted"):
        scores = data[variant]["edge_preservation"]
        assert set(scores) == {"chelsea", "retina", "text"}
        assert all(-1 <= v <= 1 for v in scores.values())
    assert 0 <= data["weighted_wins"] <= 3 and data["n_images"] == 3


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2

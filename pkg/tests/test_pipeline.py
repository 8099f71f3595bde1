"""Dataset handling, augmentation, Adam, config parsing, CLI surface."""

import os

import numpy as np
import pytest

from bsmamba import imageio, pipeline
from bsmamba.cli import main
from bsmamba.errors import ConfigError, DataError
from bsmamba.hierarchy import InstanceMaskSet
from bsmamba.losses import psnr
from bsmamba.model import ModelConfig, init_model, save_model
from bsmamba.pipeline import (AdamState, TrainConfig, adam_step, augment,
                              load_dataset, lr_at, parse_config_file)
from bsmamba.tensor import Tensor


class TestDataset:
    def test_two_pairs(self, synth_root):
        ds = load_dataset(synth_root)
        assert len(ds) == 2
        low, gt, masks = ds.load(0)
        assert low.shape == (3, 64, 64)
        assert masks is not None and masks.count == 2

    def test_orphan_named_in_error(self, tmp_path):
        os.makedirs(tmp_path / "low")
        os.makedirs(tmp_path / "high")
        imageio.write_png(str(tmp_path / "low" / "a.png"), np.full((3, 8, 8), 0.4))
        with pytest.raises(DataError, match="a.png"):
            load_dataset(str(tmp_path))

    def test_pair_order_sorted(self, tmp_path):
        for sub in ("low", "high"):
            os.makedirs(tmp_path / sub)
            for name in ("zz.png", "aa.png", "mm.png"):
                imageio.write_png(str(tmp_path / sub / name), np.full((3, 8, 8), 0.4))
        ds = load_dataset(str(tmp_path))
        assert [p.name for p in ds.pairs] == ["aa.png", "mm.png", "zz.png"]

    def test_shape_mismatch_rejected(self, tmp_path):
        for sub, size in (("low", 8), ("high", 16)):
            os.makedirs(tmp_path / sub)
            imageio.write_png(str(tmp_path / sub / "a.png"), np.full((3, size, size), 0.4))
        ds = load_dataset(str(tmp_path))
        with pytest.raises(DataError, match="differ"):
            ds.load(0)


class TestAugment:
    def _pair(self, rng, size=32):
        low = rng.uniform(0, 1, (3, size, size))
        gt = rng.uniform(0, 1, (3, size, size))
        inst = np.zeros((1, size, size))
        inst[0, :10, :10] = 1.0
        return low, gt, InstanceMaskSet(inst, np.array([0.7]))

    def test_seeded_determinism(self, rng):
        low, gt, masks = self._pair(rng)
        a1 = augment(low, gt, masks, np.random.default_rng(5), 16)
        a2 = augment(low, gt, masks, np.random.default_rng(5), 16)
        assert np.array_equal(a1[0], a2[0])
        assert np.array_equal(a1[1], a2[1])
        assert np.array_equal(a1[2].instance_maps, a2[2].instance_maps)

    def test_same_window_for_all_planes(self, rng):
        low = rng.uniform(0, 1, (3, 32, 32))
        a = augment(low, low.copy(), None, np.random.default_rng(3), 16)
        assert np.array_equal(a[0], a[1])

    def test_flip_involution(self):
        img = np.arange(12.0).reshape(1, 3, 4)
        assert np.array_equal(img[..., ::-1][..., ::-1], img)
        assert np.array_equal(img[..., ::-1, :][..., ::-1, :], img)

    def test_crop_too_large_rejected(self, rng):
        low, gt, masks = self._pair(rng, size=8)
        with pytest.raises(DataError):
            augment(low, gt, masks, np.random.default_rng(0), 16)

    def test_windows_in_bounds_1000_draws(self, rng):
        low, gt, _ = self._pair(rng)
        marker = np.zeros((3, 32, 32))
        marker[:, :, :] = np.arange(32)[None, None, :]
        g = np.random.default_rng(11)
        for _ in range(1000):
            cl, cg, _ = augment(marker, marker, None, g, 16)
            assert cl.shape == (3, 16, 16)
            assert np.isfinite(cl).all()


class TestAdam:
    def test_first_step_hand_computed(self):
        w = Tensor(np.zeros(1), requires_grad=True)
        w.grad = np.ones(1)
        st = AdamState()
        adam_step({"w": w}, st, lr=0.1)
        assert w.data[0] == pytest.approx(-0.1, abs=1e-8)

    def test_zero_gradients_no_change(self, rng):
        w = Tensor(rng.standard_normal(4), requires_grad=True)
        w.grad = np.zeros(4)
        before = w.data.copy()
        adam_step({"w": w}, AdamState(), lr=0.1)
        assert np.array_equal(w.data, before)

    def test_nan_gradient_aborts_with_name(self, rng):
        w = Tensor(rng.standard_normal(4), requires_grad=True)
        w.grad = np.full(4, np.nan)
        from bsmamba.errors import NumericError

        with pytest.raises(NumericError, match="stem.weight"):
            adam_step({"stem.weight": w}, AdamState(), lr=0.1)

    def test_lr_schedule(self):
        base = 4.0e-4
        ms = (0.5, 0.75, 0.9)
        assert lr_at(100, 500, base, ms, 0.5) == base
        assert lr_at(250, 500, base, ms, 0.5) == base * 0.5
        assert lr_at(400, 500, base, ms, 0.5) == base * 0.25
        assert lr_at(450, 500, base, ms, 0.5) == pytest.approx(5e-5, abs=1e-20)


class TestConfig:
    def test_parse_and_override(self, tmp_path):
        cfg_file = tmp_path / "t.cfg"
        cfg_file.write_text(
            "iterations = 10\nlearning_rate = 1e-3\n# comment\n"
            "composition = parallel_sum\nloss_weights = 1.0, 0.25, 0.05\n")
        cfg = parse_config_file(str(cfg_file))
        assert cfg.iterations == 10
        assert cfg.learning_rate == 1e-3
        assert cfg.composition == "parallel_sum"
        assert cfg.loss_weights == (1.0, 0.25, 0.05)

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "t.cfg"
        cfg_file.write_text("warp_speed = 9\n")
        with pytest.raises(ConfigError, match="warp_speed"):
            parse_config_file(str(cfg_file))

    def test_invariants(self):
        with pytest.raises(ConfigError):
            TrainConfig(crop_size=48)
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(milestones=(0.5, 0.4))
        with pytest.raises(ConfigError):
            TrainConfig(milestones=(0.5, 1.5))

    def test_defaults_match_protocol(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 4.0e-4
        assert cfg.loss_weights == (1.0, 0.5, 0.1)
        assert cfg.milestones == (0.5, 0.75, 0.9)


class TestTrainSmoke:
    def test_ten_iterations_and_checkpoint(self, synth_root, tmp_path):
        out = str(tmp_path / "m.ckpt")
        cfg = TrainConfig(iterations=10, log_every=5)
        res = pipeline.train(cfg, synth_root, out)
        assert os.path.exists(out)
        assert os.path.exists(out + ".log")
        assert len(res.log_lines) == 3  # 2 windows + final line
        assert res.final_psnr > res.baseline_psnr  # a few steps already help

    def test_external_scorer_training(self, synth_root, tmp_path):
        # write brightness sidecars next to the low images
        ds = load_dataset(synth_root)
        for rec in ds.pairs:
            low = imageio.read_png(rec.low_path)
            from bsmamba.hierarchy import luma_score

            vals = (luma_score(low).values * 65535).astype(np.uint16)
            imageio.write_pgm(os.path.splitext(rec.low_path)[0] + ".bright.pgm",
                              vals, maxval=65535)
        cfg = TrainConfig(iterations=2, scorer="external", log_every=2)
        res = pipeline.train(cfg, synth_root, str(tmp_path / "m.ckpt"))
        assert res.final_psnr > 0


class TestEnhanceAndEvaluate:
    def test_identity_model_roundtrips_8bit(self, tmp_path, rng):
        img = rng.uniform(0, 1, (3, 24, 20))  # non-power-of-two on purpose
        src_dir = tmp_path / "in"
        os.makedirs(src_dir)
        imageio.write_png(str(src_dir / "x.png"), img)
        ckpt = str(tmp_path / "id.ckpt")
        save_model(ckpt, init_model(ModelConfig(), seed=0))  # fresh init = identity
        written = pipeline.enhance(ckpt, str(src_dir), str(tmp_path / "out"))
        out = imageio.read_png(written[0])
        assert out.shape == img.shape
        original = imageio.read_png(str(src_dir / "x.png"))
        assert np.array_equal(out, original)

    def test_dump_maps_shows_plateaus(self, tmp_path):
        img = np.full((3, 16, 16), 0.2)
        img[:, :, 8:] = 0.8
        src = tmp_path / "in"
        os.makedirs(src)
        imageio.write_png(str(src / "half.png"), img)
        ckpt = str(tmp_path / "id.ckpt")
        save_model(ckpt, init_model(ModelConfig(), seed=0))
        written = pipeline.enhance(ckpt, str(src), str(tmp_path / "out"), dump_maps=True)
        bright_path = [w for w in written if w.endswith("half.bright.png")][0]
        bright = imageio.read_png(bright_path)[0]
        dark, light = bright[:, :8], bright[:, 8:]
        assert np.allclose(dark, dark[0, 0]) and np.allclose(light, light[0, 0])
        assert light[0, 0] > dark[0, 0]

    def test_evaluate_gt_against_itself(self, tmp_path, rng):
        for sub in ("low", "high"):
            os.makedirs(tmp_path / "data" / sub)
        img = rng.uniform(0.1, 0.9, (3, 32, 32))
        for sub in ("low", "high"):
            imageio.write_png(str(tmp_path / "data" / sub / "a.png"), img)
        ckpt = str(tmp_path / "id.ckpt")
        save_model(ckpt, init_model(ModelConfig(), seed=0))
        res = pipeline.evaluate(ckpt, str(tmp_path / "data"),
                                csv_path=str(tmp_path / "m.csv"))
        assert res["psnr"] == 100.0
        assert res["ssim"] == pytest.approx(1.0, abs=1e-9)
        csv = open(tmp_path / "m.csv").read()
        assert "mean,100.000000,1.000000" in csv

    def test_mean_of_per_image_metrics(self, synth_root, tmp_path):
        ckpt = str(tmp_path / "id.ckpt")
        save_model(ckpt, init_model(ModelConfig(), seed=0))
        res = pipeline.evaluate(ckpt, synth_root)
        assert res["psnr"] == pytest.approx(np.mean([r[1] for r in res["rows"]]), abs=1e-9)
        assert res["ssim"] == pytest.approx(np.mean([r[2] for r in res["rows"]]), abs=1e-9)

    def test_eval_reports_scan_counts_per_mode(self, synth_root, tmp_path):
        default = str(tmp_path / "d.ckpt")
        vanilla = str(tmp_path / "v.ckpt")
        save_model(default, init_model(ModelConfig(), seed=0))
        save_model(vanilla, init_model(ModelConfig(composition="vanilla_ss2d"), seed=0))
        assert pipeline.evaluate(default, synth_root)["scans_per_image"] == 8
        assert pipeline.evaluate(vanilla, synth_root)["scans_per_image"] == 16


class TestPrecisionModes:
    def test_float32_training_smoke(self, synth_root, tmp_path):
        cfg = TrainConfig(iterations=3, precision="32", log_every=3)
        res = pipeline.train(cfg, synth_root, str(tmp_path / "m32.ckpt"))
        assert np.isfinite(res.final_psnr)
        from bsmamba import checkpoint as C

        _, tensors = C.load_checkpoint(str(tmp_path / "m32.ckpt"))
        assert all(t.dtype == np.float32 for t in tensors.values())


class TestCli:
    def test_usage_error_exit_1(self, capsys):
        assert main(["train", "--nonsense"]) == 1

    def test_missing_data_exit_2(self, tmp_path, capsys):
        assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"),
                     "--data", str(tmp_path)]) == 2

    def test_numeric_failure_exit_3(self, tmp_path, synth_root, capsys):
        from bsmamba import checkpoint as C
        from bsmamba.model import named_tensors

        model = init_model(ModelConfig(), seed=0)
        tensors = {k: v.data for k, v in named_tensors(model).items()}
        tensors["stem.w"] = np.full_like(tensors["stem.w"], np.nan)
        bad = str(tmp_path / "bad.ckpt")
        C.save_checkpoint(bad, model.config.to_dict(), tensors)
        assert main(["eval", "--ckpt", bad, "--data", synth_root]) == 3

    def test_score_subcommand(self, tmp_path, capsys):
        img = str(tmp_path / "x.png")
        imageio.write_png(img, np.full((3, 8, 8), 0.5))
        out = str(tmp_path / "x.pgm")
        assert main(["score", "--in", img, "--scorer", "luma", "--out", out]) == 0
        arr, maxval = imageio.read_pgm(out)
        assert arr.shape == (8, 8)

    def test_train_enhance_eval_cycle(self, synth_root, tmp_path, capsys):
        ckpt = str(tmp_path / "m.ckpt")
        rc = main(["train", "--data", synth_root, "--out", ckpt,
                   "--set", "iterations=4", "--set", "log_every=2"])
        assert rc == 0
        rc = main(["enhance", "--ckpt", ckpt, "--in", os.path.join(synth_root, "low"),
                   "--out", str(tmp_path / "enh")])
        assert rc == 0
        assert any(f.endswith(".enhanced.png") for f in os.listdir(tmp_path / "enh"))
        rc = main(["eval", "--ckpt", ckpt, "--data", synth_root,
                   "--csv", str(tmp_path / "e.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "psnr=" in out and "ssim=" in out

import json
from pathlib import Path

import numpy as np
import pytest

from deskavatar import fileio
from deskavatar.cli import main, parse_indices
from deskavatar.fusion import save_landmarks_json
from deskavatar.pose import Skeleton2D, save_skeletons_jsonl, load_skeletons_jsonl
from deskavatar.fitting import load_poses_jsonl, save_poses_jsonl
from deskavatar.avatar import PoseParams


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(["synth", "--out", str(out), "--seed", "3", "--frames", "6",
                 "--size", "48"]) == 0
    return out


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("out = x\nbogus = 1\n")
        assert main(["synth", "--config", str(cfg)]) == 2

    def test_missing_required(self):
        assert main(["synth"]) == 2

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        out = tmp_path / "ds"
        cfg.write_text(f"out = {out}\nframes = 3\nseed = 5\nsize = 32\n")
        assert main(["synth", "--config", str(cfg), "--frames", "2"]) == 0
        captured = capsys.readouterr().out
        assert "config synth: frames = 2" in captured
        assert "config synth: seed = 5" in captured
        assert len(list((out / "frames").glob("*.png"))) == 2

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_parse_indices(self):
        assert parse_indices("", 5) == [0, 1, 2, 3, 4]
        assert parse_indices("1-3", 5) == [1, 2, 3]
        assert parse_indices("0,2-3", 5) == [0, 2, 3]
        with pytest.raises(ValueError):
            parse_indices("7", 5)


class TestSynthDeterminism:
    def test_identical_trees(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--seed", "7",
                         "--frames", "2", "--size", "32"]) == 0
        assert tree_bytes(a) == tree_bytes(b)


class TestAlignAndSmooth:
    def make_stream(self, path, rng, n=6, scale=1.0):
        skels = []
        for _ in range(n):
            kp = rng.uniform(20, 80, (17, 3)) * [scale, scale, 0] + [0, 0, 1.0]
            skels.append(Skeleton2D(kp))
        save_skeletons_jsonl(path, skels)

    def test_align_pose_runs(self, tmp_path, rng):
        ref = tmp_path / "ref.jsonl"
        src = tmp_path / "src.jsonl"
        out = tmp_path / "aligned.jsonl"
        self.make_stream(ref, rng)
        self.make_stream(src, rng)
        assert main(["align-pose", "--ref", str(ref), "--src", str(src),
                     "--out", str(out)]) == 0
        assert len(load_skeletons_jsonl(out)) == 6

    def test_align_identity(self, tmp_path, rng, capsys):
        ref = tmp_path / "ref.jsonl"
        out = tmp_path / "aligned.jsonl"
        self.make_stream(ref, rng)
        assert main(["align-pose", "--ref", str(ref), "--src", str(ref),
                     "--out", str(out)]) == 0
        for a, b in zip(load_skeletons_jsonl(out), load_skeletons_jsonl(ref)):
            assert np.abs(a.keypoints - b.keypoints).max() < 1e-9

    def test_smooth_params(self, tmp_path, rng):
        src = tmp_path / "poses.jsonl"
        out = tmp_path / "smoothed.jsonl"
        poses = []
        for t in range(12):
            p = PoseParams.zero(16)
            p.root_translation[:] = [0.01 * t, 0.0, 0.0]
            p.joint_rotations[4, 2] = 0.1 + 0.005 * t
            poses.append(p)
        save_poses_jsonl(src, poses)
        assert main(["smooth", "--in", str(src), "--out", str(out),
                     "--kind", "params"]) == 0
        back = load_poses_jsonl(out)
        # linear trajectories pass through unchanged
        for a, b in zip(back, poses):
            assert np.abs(a.root_translation - b.root_translation).max() < 1e-9

    def test_smooth_keypoints(self, tmp_path, rng):
        src = tmp_path / "kps.jsonl"
        out = tmp_path / "sm.jsonl"
        self.make_stream(src, rng, n=15)
        assert main(["smooth", "--in", str(src), "--out", str(out),
                     "--kind", "keypoints"]) == 0
        assert len(load_skeletons_jsonl(out)) == 15

    def test_smooth_bad_kind(self, tmp_path, rng):
        src = tmp_path / "kps.jsonl"
        self.make_stream(src, rng)
        assert main(["smooth", "--in", str(src), "--out", str(src) + ".o",
                     "--kind", "nonsense"]) == 2


class TestFuse:
    def setup_case(self, tmp_path, rng, disparity_src=None):
        h = w = 48
        dst = rng.uniform(0.3, 0.7, (h, w, 3))
        src = rng.uniform(0.2, 0.8, (h, w, 3))
        lm_dst = np.array([[14.0, 14.0], [34.0, 15.0], [33.0, 33.0], [15.0, 32.0],
                           [24.0, 10.0], [24.0, 38.0]])
        lm_src = lm_dst + [2.0, 1.0] if disparity_src is None else disparity_src
        paths = {}
        for name, img in (("src", src), ("dst", dst)):
            paths[name] = tmp_path / f"{name}.png"
            fileio.save_image_png(paths[name], img)
        paths["lm_src"] = tmp_path / "lm_src.json"
        paths["lm_dst"] = tmp_path / "lm_dst.json"
        save_landmarks_json(paths["lm_src"], lm_src)
        save_landmarks_json(paths["lm_dst"], lm_dst)
        paths["out"] = tmp_path / "fused.png"
        return paths

    def test_fusion_runs_and_blends(self, tmp_path, rng):
        paths = self.setup_case(tmp_path, rng)
        assert main(["fuse", "--src", str(paths["src"]), "--dst", str(paths["dst"]),
                     "--landmarks-src", str(paths["lm_src"]),
                     "--landmarks-dst", str(paths["lm_dst"]),
                     "--out", str(paths["out"])]) == 0
        fused = fileio.load_image_png(paths["out"])
        dst = fileio.load_image_png(paths["dst"])
        assert not np.allclose(fused, dst)  # interior changed
        assert np.array_equal(fused[0], dst[0])  # border untouched

    def test_gate_skips_dissimilar(self, tmp_path, rng):
        warped = rng.uniform(10, 40, (6, 2))  # structurally unrelated landmarks
        paths = self.setup_case(tmp_path, rng, disparity_src=warped)
        assert main(["fuse", "--src", str(paths["src"]), "--dst", str(paths["dst"]),
                     "--landmarks-src", str(paths["lm_src"]),
                     "--landmarks-dst", str(paths["lm_dst"]),
                     "--out", str(paths["out"])]) == 0
        fused = fileio.load_image_png(paths["out"])
        dst = fileio.load_image_png(paths["dst"])
        assert np.array_equal(fused, dst)

    def test_missing_input_is_input_error(self, tmp_path):
        assert main(["fuse", "--src", str(tmp_path / "nope.png"),
                     "--dst", str(tmp_path / "nope.png"),
                     "--landmarks-src", str(tmp_path / "a.json"),
                     "--landmarks-dst", str(tmp_path / "b.json"),
                     "--out", str(tmp_path / "o.png")]) == 3


class TestPipelineCommands:
    def test_fit_command(self, small_dataset, tmp_path):
        out = tmp_path / "fitted.jsonl"
        assert main(["fit", "--dataset", str(small_dataset), "--out", str(out),
                     "--stage1-iters", "5", "--stage2-iters", "5"]) == 0
        assert len(load_poses_jsonl(out)) == 6

    def test_train_render_eval_chain(self, small_dataset, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        assert main(["train", "--dataset", str(small_dataset), "--out", str(ckpt),
                     "--iterations", "60", "--indices", "0-4"]) == 0
        assert ckpt.exists() and Path(str(ckpt) + ".loss.csv").exists()

        renders = tmp_path / "renders"
        assert main(["render", "--checkpoint", str(ckpt),
                     "--dataset", str(small_dataset),
                     "--out", str(renders), "--indices", "5"]) == 0
        assert (renders / "0005.png").exists()

        metrics = tmp_path / "metrics.csv"
        assert main(["eval", "--pred", str(renders),
                     "--dataset", str(small_dataset),
                     "--out", str(metrics), "--indices", "5"]) == 0
        lines = metrics.read_text().splitlines()
        assert lines[0] == "frame,psnr,ssim"
        assert lines[-1].startswith("mean,")

    def test_eval_identical_images_ssim_one(self, small_dataset, tmp_path):
        preds = tmp_path / "preds"
        preds.mkdir()
        ds_frames = small_dataset / "frames"
        for i in range(6):
            (preds / f"{i:04d}.png").write_bytes((ds_frames / f"{i:04d}.png").read_bytes())
        out = tmp_path / "m.csv"
        assert main(["eval", "--pred", str(preds), "--dataset", str(small_dataset),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()[1:]
        for line in lines:
            _, p, s = line.split(",")
            assert float(s) == 1.0
            assert p == "inf"

    def test_eval_missing_prediction(self, small_dataset, tmp_path):
        assert main(["eval", "--pred", str(tmp_path / "empty"),
                     "--dataset", str(small_dataset),
                     "--out", str(tmp_path / "m.csv")]) == 3


class TestDdimDemo:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "conv.csv"
        assert main(["ddim-demo", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "steps,error"
        errs = [float(line.split(",")[1]) for line in lines[1:]]
        assert errs[0] > errs[1] > errs[2]

    def test_idempotent_bytes(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert main(["ddim-demo", "--out", str(a), "--seed", "4"]) == 0
        assert main(["ddim-demo", "--out", str(b), "--seed", "4"]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestErrorMapping:
    def test_numeric_error_exit_code(self, small_dataset, tmp_path, monkeypatch, capsys):
        import deskavatar.cli as cli_mod

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic numerical failure")

        monkeypatch.setattr(cli_mod, "train", boom)
        code = main(["train", "--dataset", str(small_dataset),
                     "--out", str(tmp_path / "m.ckpt"), "--iterations", "1"])
        assert code == 4
        assert "ERROR NUMERIC:" in capsys.readouterr().err

    def test_out_of_range_indices(self, small_dataset, tmp_path):
        assert main(["render", "--checkpoint", str(tmp_path / "missing.ckpt"),
                     "--dataset", str(small_dataset),
                     "--out", str(tmp_path / "r"), "--indices", "99"]) == 3

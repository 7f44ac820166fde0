import json
import math

import numpy as np
import pytest
import yaml

from scankit.__main__ import build_parser, flag_overrides, main
from scankit.config import TrainConfig
from scankit.gan import GanModel, load_checkpoint, save_checkpoint
from scankit.ingest import load_scanpaths, write_scanpaths
from scankit.utils.image import save_png

from conftest import random_set

TINY_TRAIN = dict(
    image_height=8,
    seq_len=6,
    d_z=4,
    conv_channels=[2, 2],
    feature_hidden=4,
    feature_width=4,
    gen_widths=[8, 8],
    disc_widths=[4, 4],
    batch_size=2,
    n_augment=1,
    val_samples=2,
)


def error_lines(err: str) -> list[dict]:
    return [json.loads(line) for line in err.splitlines() if line.startswith('{"error"')]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "scankit.yaml"
    path.write_text(yaml.safe_dump({"train": TINY_TRAIN, "metrics": {"n_lat": 6}}), encoding="utf-8")
    return path


@pytest.fixture
def checkpoint(tmp_path):
    cfg = TrainConfig(**TINY_TRAIN)
    path = tmp_path / "model.sckt"
    save_checkpoint(path, GanModel(cfg).store, {"cfg": cfg.model_dump(mode="json")})
    return path


@pytest.fixture
def panorama(tmp_path, rng):
    path = tmp_path / "room.png"
    save_png(path, rng.uniform(size=(16, 32, 3)))
    return path


@pytest.fixture
def scanpath_files(tmp_path, rng):
    gen, gt = tmp_path / "gen.jsonl", tmp_path / "gt.jsonl"
    write_scanpaths(gen, [random_set(rng, 4, image_id="room")])
    write_scanpaths(gt, [random_set(rng, 3, image_id="room")])
    return gen, gt


class TestParser:
    def test_flag_overrides(self):
        args = build_parser().parse_args(["train", "--epochs", "3", "--lr-g", "0.01", "--seed", "9", "--synthetic", "2"])
        assert flag_overrides(args) == {"train": {"epochs": 3, "lr_g": 0.01, "seed": 9}}

    def test_top_level_seed(self):
        args = build_parser().parse_args(["generate", "--model", "m", "--image", "i", "--out", "o", "--seed", "7"])
        assert flag_overrides(args) == {"seed": 7}

    def test_unknown_flag(self, capsys):
        assert main(["evaluate", "--bogus", "1"]) == 2
        (error,) = error_lines(capsys.readouterr().err)
        assert error["error"] == "CliError"
        assert "--bogus" in error["message"]

    def test_unknown_command(self, capsys):
        assert main(["explode"]) == 2
        assert error_lines(capsys.readouterr().err)[0]["error"] == "CliError"

    def test_missing_required(self, capsys):
        assert main(["convert", "--input", "x.jsonl"]) == 2
        assert error_lines(capsys.readouterr().err)[0]["error"] == "CliError"


class TestConvert:
    def test_decimates(self, tmp_path):
        raw = tmp_path / "raw.jsonl"
        lines = [
            json.dumps({"image_id": "room", "user_id": user, "t": i / 120, "lat": 0.0, "lon": 0.0005 * i})
            for user in ("a", "b")
            for i in range(3600)
        ]
        raw.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out = tmp_path / "room.jsonl"
        assert main(["convert", "--input", str(raw), "--out", str(out), "--quiet"]) == 0
        sets = load_scanpaths(out)
        assert sets["room"].user_ids == ["a", "b"]
        assert [len(sp) for sp in sets["room"]] == [30, 30]

    def test_malformed_input(self, tmp_path, capsys):
        raw = tmp_path / "raw.jsonl"
        raw.write_text('{"image_id": "room"}\n', encoding="utf-8")
        assert main(["convert", "--input", str(raw), "--out", str(tmp_path / "o.jsonl")]) == 1
        (error,) = error_lines(capsys.readouterr().err)
        assert error["error"] == "IngestError"
        assert error["message"].startswith("line 1: ")

    def test_missing_input(self, tmp_path, capsys):
        assert main(["convert", "--input", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == 1
        assert error_lines(capsys.readouterr().err)[0]["error"] == "IngestError"


class TestEvaluate:
    def test_writes_report(self, tmp_path, scanpath_files):
        gen, gt = scanpath_files
        out = tmp_path / "report.json"
        assert main(["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(out), "--metrics", "LEV,DTW"]) == 0
        (report,) = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert report["image_id"] == "room"
        assert report["protocol"] == "pairwise"
        assert report["LEV"] > 0 and report["DTW"] > 0
        assert report["MAN"] is None
        assert report["config"]["n_lat"] == 9

    def test_text_format(self, tmp_path, scanpath_files):
        gen, gt = scanpath_files
        out = tmp_path / "report.txt"
        assert main(["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(out), "--metrics", "HAU", "--format", "text"]) == 0
        text = out.read_text(encoding="utf-8")
        assert text.startswith("image_id=room\nprotocol=pairwise\nHAU=")

    def test_config_precedence(self, tmp_path, scanpath_files, config_file, monkeypatch):
        gen, gt = scanpath_files
        out = tmp_path / "report.json"
        monkeypatch.setenv("SCANKIT_METRICS__N_LON", "12")
        base = ["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(out), "--metrics", "LEV", "--config", str(config_file)]

        assert main(base) == 0
        config = json.loads(out.read_text(encoding="utf-8"))["config"]
        assert (config["n_lat"], config["n_lon"]) == (6, 12)

        assert main(base + ["--n-lat", "4", "--n-lon", "8"]) == 0
        config = json.loads(out.read_text(encoding="utf-8"))["config"]
        assert (config["n_lat"], config["n_lon"]) == (4, 8)

    def test_missing_image(self, tmp_path, rng, capsys):
        gen, gt = tmp_path / "gen.jsonl", tmp_path / "gt.jsonl"
        write_scanpaths(gen, [random_set(rng, 2, image_id="hall")])
        write_scanpaths(gt, [random_set(rng, 2, image_id="room")])
        assert main(["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(tmp_path / "r.json")]) == 2
        assert error_lines(capsys.readouterr().err)[0]["error"] == "CliError"

        assert main(["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(tmp_path / "r.json"),
                     "--metrics", "EYE", "--gen-image-id"]) == 0

    def test_invalid_setting(self, tmp_path, scanpath_files, capsys):
        gen, gt = scanpath_files
        assert main(["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(tmp_path / "r.json"), "--n-lat", "0"]) == 1
        assert error_lines(capsys.readouterr().err)[0]["error"] == "ConfigError"

    def test_unknown_metric(self, tmp_path, scanpath_files, capsys):
        gen, gt = scanpath_files
        assert main(["evaluate", "--gen", str(gen), "--gt", str(gt), "--out", str(tmp_path / "r.json"), "--metrics", "XYZ"]) == 1
        assert error_lines(capsys.readouterr().err)[0]["error"] == "MetricError"

    def test_list(self):
        assert main(["evaluate", "--list"]) == 0


class TestBaseline:
    @pytest.mark.parametrize("kind", ["human", "random"])
    def test_report(self, tmp_path, scanpath_files, kind):
        _, gt = scanpath_files
        out = tmp_path / f"{kind}.json"
        assert main(["baseline", "--gt", str(gt), "--out", str(out), "--kind", kind, "--metrics", "FRE", "--seed", "3"]) == 0
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["protocol"] == f"{kind}_baseline"
        assert report["FRE"] > 0


class TestTrainAndGenerate:
    def test_zero_epochs_saves_init(self, tmp_path, config_file, capsys):
        out = tmp_path / "model.sckt"
        args = ["train", "--config", str(config_file), "--synthetic", "2", "--epochs", "0", "--out", str(out), "--quiet"]
        assert main(args) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["epochs"] == []

        store, header = load_checkpoint(out)
        init = GanModel(TrainConfig(**TINY_TRAIN))
        for name, value in init.store.params.items():
            assert np.array_equal(store.params[name], value.astype(np.float32).astype(np.float64)), name
        assert header["cfg"]["image_width"] == 16

    def test_train_then_generate(self, tmp_path, config_file, panorama, capsys):
        out = tmp_path / "model.sckt"
        log_path = tmp_path / "train.jsonl"
        args = [
            "train", "--config", str(config_file), "--synthetic", "2", "--epochs", "1",
            "--out", str(out), "--log-path", str(log_path), "--quiet",
        ]
        assert main(args) == 0
        summary = json.loads(capsys.readouterr().out)
        assert [epoch["epoch"] for epoch in summary["epochs"]] == [1]
        assert (tmp_path / "model.sckt.resume").exists()
        assert len(log_path.read_text(encoding="utf-8").splitlines()) == 1

        sps_path = tmp_path / "gen.jsonl"
        assert main(["generate", "--model", str(out), "--image", str(panorama), "--out", str(sps_path), "--n", "5"]) == 0
        assert len(load_scanpaths(sps_path)["room"]) == 5

    def test_generate_is_deterministic(self, tmp_path, checkpoint, panorama):
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (first, second):
            args = ["generate", "--model", str(checkpoint), "--image", str(panorama), "--out", str(out), "--n", "100", "--seed", "7"]
            assert main(args) == 0
        assert first.read_bytes() == second.read_bytes()
        sets = load_scanpaths(first)
        assert list(sets) == ["room"]
        assert len(sets["room"]) == 100
        assert all(len(sp) == 6 for sp in sets["room"])

    def test_generate_seed_changes_output(self, tmp_path, checkpoint, panorama):
        outputs = []
        for seed in ("1", "2"):
            out = tmp_path / f"{seed}.jsonl"
            assert main(["generate", "--model", str(checkpoint), "--image", str(panorama), "--out", str(out), "--n", "3", "--seed", seed]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] != outputs[1]

    def test_bad_checkpoint(self, tmp_path, panorama, capsys):
        broken = tmp_path / "broken.sckt"
        broken.write_bytes(b"garbage")
        assert main(["generate", "--model", str(broken), "--image", str(panorama), "--out", str(tmp_path / "o.jsonl")]) == 1
        assert error_lines(capsys.readouterr().err)[0]["error"] == "ModelError"

    def test_train_summary_writes_null_for_non_finite(self, config_file, monkeypatch, capsys):
        from scankit.gan import trainer

        def fake_train(dataset, cfg, val, resume, on_epoch):
            log = trainer.EpochLog(epoch=1, step=0, loss_g=math.nan, loss_d=math.nan, val_dtw=2.5, seconds=0.1)
            on_epoch(log)
            return trainer.TrainResult(model=GanModel(cfg), logs=[log], best_epoch=1, best_val=2.5)

        monkeypatch.setattr(trainer, "train", fake_train)
        assert main(["train", "--config", str(config_file), "--synthetic", "1", "--epochs", "1", "--quiet"]) == 0
        out = capsys.readouterr().out
        assert "NaN" not in out and "Infinity" not in out
        summary = json.loads(out)
        assert summary["initial_val_dtw"] is None
        assert summary["best_val_dtw"] == 2.5
        assert summary["epochs"][0]["loss_g"] is None and summary["epochs"][0]["val_dtw"] == 2.5

    def test_train_without_coordconv(self, tmp_path, config_file, capsys):
        out = tmp_path / "rgb.sckt"
        args = ["train", "--config", str(config_file), "--synthetic", "1", "--epochs", "0", "--no-coordconv", "--out", str(out), "--quiet"]
        assert main(args) == 0
        _, header = load_checkpoint(out)
        assert header["cfg"]["coordconv"] is False

    def test_train_needs_data(self, capsys):
        assert main(["train", "--epochs", "0"]) == 2
        assert error_lines(capsys.readouterr().err)[0]["error"] == "CliError"


class TestAnalyze:
    def test_outputs(self, tmp_path, rng):
        data = tmp_path / "sps.jsonl"
        write_scanpaths(data, [random_set(rng, 4, length=3, image_id="room")])
        out_dir = tmp_path / "analysis"
        assert main(["analyze", "--input", str(data), "--out-dir", str(out_dir), "--quiet"]) == 0
        folder = out_dir / "room"
        for name in ("aggregate.npy", "aggregate.png", "latitude_marginal.json", "kde_000.npy", "kde_002.png",
                     "regions.json", "exploration.json", "roc.json"):
            assert (folder / name).exists(), name
        assert np.load(folder / "aggregate.npy").sum() == pytest.approx(1.0)
        roc = json.loads((folder / "roc.json").read_text(encoding="utf-8"))
        assert roc[0] == {"n": 0.0, "hit_rate": 0.0, "std": 0.0}
        assert roc[-1]["hit_rate"] == 100.0

    def test_selected_kind_and_image(self, tmp_path, rng):
        data = tmp_path / "sps.jsonl"
        write_scanpaths(data, [random_set(rng, 2, length=3, image_id="room"), random_set(rng, 2, length=3, image_id="hall")])
        out_dir = tmp_path / "analysis"
        assert main(["analyze", "--input", str(data), "--out-dir", str(out_dir), "--image-id", "hall",
                     "--kind", "exploration", "--quiet"]) == 0
        assert sorted(p.name for p in out_dir.iterdir()) == ["hall"]
        assert sorted(p.name for p in (out_dir / "hall").iterdir()) == ["exploration.json"]


class TestThumbnail:
    def test_from_scanpaths(self, tmp_path, rng, panorama):
        data = tmp_path / "sps.jsonl"
        write_scanpaths(data, [random_set(rng, 3, length=4, image_id="room")])
        out_dir = tmp_path / "thumb"
        args = ["thumbnail", "--image", str(panorama), "--scanpaths", str(data), "--out-dir", str(out_dir),
                "--upsample", "2", "--out-height", "12", "--out-width", "16", "--quiet"]
        assert main(args) == 0
        rows = json.loads((out_dir / "trajectory.json").read_text(encoding="utf-8"))
        assert len(rows) == 7
        assert sorted(p.name for p in out_dir.glob("frame_*.png")) == [f"frame_{k:04d}.png" for k in range(7)]

    def test_from_model(self, tmp_path, checkpoint, panorama):
        out_dir = tmp_path / "thumb"
        args = ["thumbnail", "--image", str(panorama), "--model", str(checkpoint), "--out-dir", str(out_dir),
                "--n", "8", "--out-height", "12", "--out-width", "16", "--seed", "1"]
        assert main(args) == 0
        assert len(json.loads((out_dir / "trajectory.json").read_text(encoding="utf-8"))) == 6

    def test_needs_source(self, tmp_path, panorama, capsys):
        assert main(["thumbnail", "--image", str(panorama), "--out-dir", str(tmp_path)]) == 2
        assert error_lines(capsys.readouterr().err)[0]["error"] == "CliError"

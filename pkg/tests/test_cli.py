"""End-to-end CLI runs on toy datasets: artifact layout, determinism,
checkpoint resume, and error/exit-code contracts."""

import json

import numpy as np
import pytest

from conftest import write_dataset_tree
from ricecnn import cli
from ricecnn.config import apply_overrides, config_from_dict, load_config, ConfigError
from ricecnn.model import build_simple_cnn, save_weights
from ricecnn.netpbm import write_ppm
from ricecnn.rng import RngState

TOY = [
    ("lo", "A", 2, 0.25),
    ("hi", "A", 2, 0.45),
    ("lo", "B", 2, 0.65),
    ("hi", "B", 2, 0.85),
]


@pytest.fixture
def toy_tree(tmp_path):
    root = tmp_path / "data"
    write_dataset_tree(root, TOY, size=16, seed=3)
    return root


def write_config(path, dataset_root, output_dir, **extra):
    doc = {
        "dataset_root": str(dataset_root),
        "output_dir": str(output_dir),
        "protocol": "two_stage",
        "k": 2,
        "seed": 7,
        "train": {"epochs": 1, "batch_size": 8, "learning_rate": 1e-3},
        "augment": {"variants_per_image": 0},
    }
    doc.update(extra)
    path.write_text(json.dumps(doc))
    return path


class TestTrainCommand:
    def test_two_stage_artifacts(self, tmp_path, toy_tree):
        out = tmp_path / "run"
        cfg = write_config(tmp_path / "c.json", toy_tree, out)
        assert cli.main(["train", "--config", str(cfg)]) == 0
        assert (out / "model.weights").is_file()
        assert (out / "config.lock.json").is_file()
        reports = json.loads((out / "stage_reports.json").read_text())
        assert reports["protocol"] == "two_stage"
        assert [s["stage"] for s in reports["stages"]] == ["stage1", "stage2"]

    def test_rerun_is_byte_identical(self, tmp_path, toy_tree):
        # same config in two different output dirs: weights and reports agree
        blobs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            cfg = write_config(tmp_path / f"{name}.json", toy_tree, out)
            assert cli.main(["train", "--config", str(cfg)]) == 0
            blobs.append({
                "weights": (out / "model.weights").read_bytes(),
                "reports": (out / "stage_reports.json").read_bytes(),
            })
        assert blobs[0]["weights"] == blobs[1]["weights"]
        assert blobs[0]["reports"] == blobs[1]["reports"]
        # rerunning the identical config reproduces every artifact
        out = tmp_path / "r1"
        cfg = tmp_path / "r1.json"
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert cli.main(["train", "--config", str(cfg)]) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_missing_dataset_root(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", tmp_path / "missing", tmp_path / "out")
        assert cli.main(["train", "--config", str(cfg)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "missing" in err
        assert err.count("\n") == 1  # single line

    def test_baseline_protocol(self, tmp_path, toy_tree):
        out = tmp_path / "run"
        cfg = write_config(tmp_path / "c.json", toy_tree, out, protocol="baseline")
        assert cli.main(["train", "--config", str(cfg)]) == 0
        reports = json.loads((out / "stage_reports.json").read_text())
        assert [s["stage"] for s in reports["stages"]] == ["baseline"]

    def test_transfer_needs_donor(self, tmp_path, toy_tree, capsys):
        cfg = write_config(tmp_path / "c.json", toy_tree, tmp_path / "o",
                           protocol="transfer")
        assert cli.main(["train", "--config", str(cfg)]) == 1
        assert "donor_weights" in capsys.readouterr().err

    def test_transfer_with_donor(self, tmp_path, toy_tree):
        donor_path = tmp_path / "donor.weights"
        spec, weights = build_simple_cnn(2, RngState(4))
        save_weights(weights, donor_path, spec=spec)
        out = tmp_path / "run"
        cfg = write_config(tmp_path / "c.json", toy_tree, out,
                           protocol="transfer", donor_weights=str(donor_path))
        assert cli.main(["train", "--config", str(cfg)]) == 0

    def test_set_overrides_win(self, tmp_path, toy_tree):
        out = tmp_path / "run"
        cfg = write_config(tmp_path / "c.json", toy_tree, out)
        assert cli.main(["train", "--config", str(cfg),
                         "--set", "train.epochs=0", "--set", "protocol=baseline"]) == 0
        lock = json.loads((out / "config.lock.json").read_text())
        assert lock["train"]["epochs"] == 0
        assert lock["protocol"] == "baseline"
        reports = json.loads((out / "stage_reports.json").read_text())
        assert reports["stages"][0]["epochs"] == []


class TestCrossvalCommand:
    def test_artifacts_and_recomputable_stats(self, tmp_path, toy_tree):
        out = tmp_path / "cv"
        cfg = write_config(tmp_path / "c.json", toy_tree, out, protocol="baseline")
        assert cli.main(["crossval", "--config", str(cfg)]) == 0
        report = json.loads((out / "crossval_report.json").read_text())
        assert len(report["fold_accuracies"]) == 2
        assert report["mean_accuracy"] == pytest.approx(
            float(np.mean(report["fold_accuracies"])), abs=1e-12)
        assert report["std_accuracy"] == pytest.approx(
            float(np.std(report["fold_accuracies"], ddof=1)), abs=1e-12)
        for fold in range(2):
            csv = (out / f"confusion_fold{fold}.csv").read_text().strip().splitlines()
            counts = report["folds"][fold]["confusion"]
            for row, line in zip(counts, csv[1:]):
                assert [int(c) for c in line.split(",")[1:]] == row

    def test_checkpoint_resume_matches_full_run(self, tmp_path, toy_tree):
        out_full = tmp_path / "full"
        cfg = write_config(tmp_path / "c1.json", toy_tree, out_full, protocol="baseline")
        assert cli.main(["crossval", "--config", str(cfg)]) == 0
        full_report = (out_full / "crossval_report.json").read_bytes()
        done = json.loads((out_full / "folds_done.json").read_text())

        # simulate an interrupted run: only fold 0 finished
        out_resume = tmp_path / "resume"
        out_resume.mkdir()
        (out_resume / "folds_done.json").write_text(
            json.dumps({"0": done["0"]}, indent=2, sort_keys=True) + "\n")
        cfg2 = write_config(tmp_path / "c2.json", toy_tree, out_resume,
                            protocol="baseline")
        assert cli.main(["crossval", "--config", str(cfg2)]) == 0
        assert (out_resume / "crossval_report.json").read_bytes() == full_report

    def test_two_stage_protocol_supported(self, tmp_path, toy_tree):
        out = tmp_path / "cv2"
        cfg = write_config(tmp_path / "c.json", toy_tree, out,
                           train={"epochs": 1, "stage_one_epochs": 0,
                                  "batch_size": 8, "learning_rate": 1e-3})
        assert cli.main(["crossval", "--config", str(cfg)]) == 0

    def test_donor_protocols_rejected(self, tmp_path, toy_tree, capsys):
        donor_path = tmp_path / "donor.weights"
        spec, weights = build_simple_cnn(2, RngState(4))
        save_weights(weights, donor_path, spec=spec)
        cfg = write_config(tmp_path / "c.json", toy_tree, tmp_path / "o",
                           protocol="fine_tune", donor_weights=str(donor_path))
        assert cli.main(["crossval", "--config", str(cfg)]) == 1
        assert "protocol" in capsys.readouterr().err


class TestAugmentCommand:
    def make_inputs(self, tmp_path, n=5):
        root = tmp_path / "orig"
        d = root / "A__x"
        d.mkdir(parents=True)
        rng = RngState(8)
        for i in range(n):
            write_ppm(d / f"img{i}.ppm", rng.derive(str(i)).random((8, 8, 3)))
        return root

    def test_expansion_count_and_naming(self, tmp_path):
        root = self.make_inputs(tmp_path, n=5)
        out = tmp_path / "expanded"
        cfg = write_config(tmp_path / "c.json", root, tmp_path / "unused",
                           augment={"variants_per_image": 10})
        assert cli.main(["augment", "--config", str(cfg),
                         "--input", str(root), "--output", str(out)]) == 0
        files = sorted(p.name for p in (out / "A__x").iterdir())
        assert len(files) == 55
        assert "img0.ppm" in files
        assert "img0__aug0.ppm" in files
        assert "img0__aug9.ppm" in files

    def test_same_seed_identical_bytes(self, tmp_path):
        root = self.make_inputs(tmp_path, n=2)
        cfg = write_config(tmp_path / "c.json", root, tmp_path / "unused",
                           augment={"variants_per_image": 3})
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert cli.main(["augment", "--config", str(cfg),
                             "--input", str(root), "--output", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in (out / "A__x").iterdir()})
        assert outs[0] == outs[1]


class TestActivationsCommand:
    @pytest.fixture
    def weights_and_image(self, tmp_path):
        spec, weights = build_simple_cnn(3, RngState(12))
        wpath = tmp_path / "m.weights"
        save_weights(weights, wpath, spec=spec)
        ipath = tmp_path / "img.ppm"
        write_ppm(ipath, RngState(13).random((224, 224, 3)))
        return wpath, ipath

    def test_first_conv_exports(self, tmp_path, weights_and_image):
        wpath, ipath = weights_and_image
        out = tmp_path / "acts"
        assert cli.main(["activations", "--weights", str(wpath), "--image", str(ipath),
                         "--layer", "first_conv", "--output", str(out)]) == 0
        pgms = sorted(out.glob("*.pgm"))
        assert len(pgms) == 17  # 16 channels + composite
        sidecar = json.loads((out / "first_conv_maps.json").read_text())
        assert sidecar["map_shape"] == [222, 222]

    def test_last_conv_exports(self, tmp_path, weights_and_image):
        wpath, ipath = weights_and_image
        out = tmp_path / "acts"
        assert cli.main(["activations", "--weights", str(wpath), "--image", str(ipath),
                         "--layer", "last_conv", "--output", str(out)]) == 0
        assert len(list(out.glob("*.pgm"))) == 65  # 64 channels + composite
        sidecar = json.loads((out / "last_conv_maps.json").read_text())
        assert sidecar["map_shape"] == [10, 10]

    def test_small_image_is_resized(self, tmp_path, weights_and_image):
        wpath, _ = weights_and_image
        ipath = tmp_path / "small.ppm"
        write_ppm(ipath, RngState(14).random((32, 32, 3)))
        out = tmp_path / "acts"
        assert cli.main(["activations", "--weights", str(wpath), "--image", str(ipath),
                         "--layer", "first_conv", "--output", str(out)]) == 0

    def test_unknown_layer_is_usage_error(self, tmp_path, weights_and_image):
        wpath, ipath = weights_and_image
        with pytest.raises(SystemExit) as e:
            cli.main(["activations", "--weights", str(wpath), "--image", str(ipath),
                      "--layer", "middle_conv", "--output", str(tmp_path / "x")])
        assert e.value.code == 2


class TestConfigParsing:
    def test_unknown_top_level_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"learning_rate": 1}))
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    def test_unknown_nested_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"momentum": 0.9}}))
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    def test_train_seed_not_accepted(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"seed": 3}}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_seed_flows_into_train_config(self):
        cfg = config_from_dict({"seed": 42})
        assert cfg.seed == 42
        assert cfg.train.seed == 42

    def test_overrides(self):
        cfg = config_from_dict({"seed": 1})
        cfg2 = apply_overrides(cfg, ["train.epochs=3", "k=4",
                                     "augment.variants_per_image=2"])
        assert cfg2.train.epochs == 3
        assert cfg2.k == 4
        assert cfg2.augment.variants_per_image == 2

    def test_override_bad_path(self):
        cfg = config_from_dict({})
        with pytest.raises(ConfigError):
            apply_overrides(cfg, ["train.momentum=0.9"])
        with pytest.raises(ConfigError):
            apply_overrides(cfg, ["no_equals_sign"])

    def test_lock_file_is_self_sufficient(self, tmp_path, toy_tree):
        out = tmp_path / "run"
        cfg = write_config(tmp_path / "c.json", toy_tree, out)
        assert cli.main(["train", "--config", str(cfg), "--set", "seed=99"]) == 0
        lock = load_config(out / "config.lock.json")
        assert lock.seed == 99
        assert lock.train.seed == 99
        assert lock.dataset_root == str(toy_tree)

    def test_invalid_protocol(self):
        with pytest.raises(ConfigError, match="protocol"):
            config_from_dict({"protocol": "alchemy"}).validate()

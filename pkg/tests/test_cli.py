import json
import re

import numpy as np
import pytest

from gradecore.cli import main, read_config_file, resolve_options
from gradecore.errors import ConfigError

from synthdata import solid_color_dataset, write_image_tree


@pytest.fixture(scope="module")
def toy_tree(tmp_path_factory):
    ds = solid_color_dataset(n_per_class=16, size=16, seed=0)
    return write_image_tree(ds, tmp_path_factory.mktemp("toy") / "data")


@pytest.fixture(scope="module")
def trained_run(toy_tree, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--model", "mlp", "--data", str(toy_tree), "--seed", "7",
                 "--size", "16", "--batch", "16", "--steps", "600", "--out", str(out)])
    assert code == 0
    return out


class TestTrain:
    def test_artifacts_exist(self, trained_run):
        assert (trained_run / "mlp.gckpt").exists()
        assert (trained_run / "history.csv").exists()
        assert (trained_run / "history.svg").exists()
        assert (trained_run / "manifest.json").exists()

    def test_paper_style_output(self, toy_tree, tmp_path, capsys):
        out = tmp_path / "r"
        code = main(["train", "--model", "knn", "--data", str(toy_tree), "--size", "16",
                     "--out", str(out)])
        assert code == 0
        text = capsys.readouterr().out
        assert re.search(r"Training Accuracy: \d+\.\d+%", text)
        assert re.search(r"Test Accuracy: \d+\.\d+%", text)

    def test_missing_data_flag_is_usage_error(self):
        assert main(["train", "--model", "mlp"]) == 2

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_bad_data_dir_is_runtime_error_but_manifest_written(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        out = tmp_path / "out"
        code = main(["train", "--model", "mlp", "--data", str(empty), "--out", str(out)])
        assert code == 1
        assert (out / "manifest.json").exists()

    def test_manifest_contents(self, trained_run, toy_tree):
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["config"]["model"] == "mlp"
        assert manifest["config"]["seed"] == 7
        assert manifest["config"]["steps"] == 600
        fp = manifest["dataset_fingerprint"]
        assert fp["file_count"] == 64
        assert len(fp["content_hash"]) == 64
        assert "started_at" in manifest

    def test_json_log_lines(self, toy_tree, tmp_path, capsys):
        out = tmp_path / "jr"
        code = main(["train", "--model", "mlp", "--data", str(toy_tree), "--size", "16",
                     "--batch", "16", "--steps", "8", "--out", str(out), "--log-json"])
        assert code == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
        events = [json.loads(l) for l in lines]
        kinds = [e["event"] for e in events]
        assert kinds[0] == "train_start"
        assert "epoch" in kinds
        assert kinds[-1] == "train_end"


class TestEvaluatePredict:
    def test_evaluate_overfit_on_train_tree(self, trained_run, toy_tree, capsys):
        code = main(["evaluate", str(trained_run / "mlp.gckpt"), "--data", str(toy_tree)])
        assert code == 0
        text = capsys.readouterr().out
        match = re.search(r"Accuracy: (\d+\.\d+)%", text)
        assert match and float(match.group(1)) >= 95.0
        assert "Confusion matrix" in text

    def test_predict_training_image(self, trained_run, toy_tree, capsys):
        image = sorted((toy_tree / "red").glob("*.png"))[0]
        code = main(["predict", str(trained_run / "mlp.gckpt"), str(image)])
        assert code == 0
        text = capsys.readouterr().out
        assert "Predicted: red" in text
        probs = dict(re.findall(r"^(\w+): ([0-9.]+)$", text, re.M))
        total = sum(float(v) for v in probs.values())
        assert abs(total - 1.0) < 1e-6
        assert float(probs["red"]) > 0.9

    def test_missing_checkpoint_is_runtime_error(self, toy_tree):
        assert main(["evaluate", "/nope/missing.gckpt", "--data", str(toy_tree)]) == 1


class TestGradcheckCommand:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--model", "mlp"]) == 0
        assert "[PASS] mlp" in capsys.readouterr().out


class TestReportCommand:
    def write_csv(self, path, rows):
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        lines += [f"{e},{tl:.6f},{ta:.6f},{vl:.6f},{va:.6f}" for e, tl, ta, vl, va in rows]
        path.write_text("\n".join(lines) + "\n")

    def test_two_rows_two_polylines(self, tmp_path, capsys):
        csv = tmp_path / "h.csv"
        self.write_csv(csv, [(1, 1.0, 0.3, 1.1, 0.25), (2, 0.6, 0.6, 0.8, 0.5)])
        svg_path = tmp_path / "h.svg"
        assert main(["report", str(csv), str(svg_path)]) == 0
        svg = svg_path.read_text()
        polylines = re.findall(r'<polyline[^>]*points="([^"]*)"', svg)
        assert len(polylines) == 2
        for pts in polylines:
            assert len(pts.split()) == 2

    def test_byte_identical_for_identical_input(self, tmp_path):
        csv = tmp_path / "h.csv"
        self.write_csv(csv, [(1, 1.0, 0.3, 1.1, 0.25), (2, 0.6, 0.6, 0.8, 0.5)])
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        assert main(["report", str(csv), str(a)]) == 0
        assert main(["report", str(csv), str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_monotone_losses_monotone_screen_y(self, tmp_path):
        rows = [(e, 2.0 / e, 0.5, 3.0 / e, 0.5) for e in range(1, 6)]
        csv = tmp_path / "h.csv"
        self.write_csv(csv, rows)
        svg_path = tmp_path / "h.svg"
        assert main(["report", str(csv), str(svg_path)]) == 0
        svg = svg_path.read_text()
        for pts in re.findall(r'<polyline[^>]*points="([^"]*)"', svg):
            ys = [float(p.split(",")[1]) for p in pts.split()]
            assert all(a < b for a, b in zip(ys, ys[1:]))

    def test_malformed_csv_names_row(self, tmp_path, capsys):
        csv = tmp_path / "h.csv"
        csv.write_text("epoch,train_loss,train_acc,val_loss,val_acc\n"
                       "1,0.5,0.5,0.5,0.5\n"
                       "2,oops,0.5,0.5,0.5\n")
        assert main(["report", str(csv), str(tmp_path / "x.svg")]) == 1
        assert "row 3" in capsys.readouterr().err

    def test_missing_header(self, tmp_path):
        csv = tmp_path / "h.csv"
        csv.write_text("nope\n1,2,3,4,5\n")
        assert main(["report", str(csv), str(tmp_path / "x.svg")]) == 1


class TestConfigResolution:
    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nlr = 0.5\nbatch = 7\nseed=9\n")
        parsed = read_config_file(cfg)
        assert parsed == {"lr": 0.5, "batch": 7, "seed": 9}

        import argparse
        args = argparse.Namespace(model="mlp", size=None, seed=None, batch=3,
                                  lr=None, epochs=None, steps=None, patience=None,
                                  k=None, test_fraction=None, threads=None,
                                  out=None, config=str(cfg), log_json=False)
        opts = resolve_options(args)
        assert opts["lr"] == 0.5        # from file
        assert opts["batch"] == 3       # flag wins over file
        assert opts["seed"] == 9        # from file
        assert opts["steps"] == 2000    # mlp default

    def test_model_defaults(self):
        import argparse
        args = argparse.Namespace(model="cnn", size=None, seed=None, batch=None,
                                  lr=None, epochs=None, steps=None, patience=None,
                                  k=None, test_fraction=None, threads=None,
                                  out=None, config=None, log_json=False)
        opts = resolve_options(args)
        assert opts["batch"] == 32 and opts["lr"] == 0.01
        assert opts["epochs"] == 25 and opts["patience"] == 5

    def test_threads_env_fallback(self, monkeypatch):
        import argparse
        monkeypatch.setenv("GRADECORE_THREADS", "4")
        args = argparse.Namespace(model="mlp", size=None, seed=None, batch=None,
                                  lr=None, epochs=None, steps=None, patience=None,
                                  k=None, test_fraction=None, threads=None,
                                  out=None, config=None, log_json=False)
        # flag absent -> env fallback applies
        opts = resolve_options(args)
        assert opts["threads"] == 4
        monkeypatch.delenv("GRADECORE_THREADS")
        assert resolve_options(args)["threads"] == 1
        args.threads = 2
        assert resolve_options(args)["threads"] == 2

    def test_bad_config_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a pair\n")
        with pytest.raises(ConfigError):
            read_config_file(cfg)


def test_cnn_desk_scale_size_32(tmp_path):
    from synthdata import texture_dataset
    tree = write_image_tree(texture_dataset(n_per_class=10, size=32, seed=6),
                            tmp_path / "tex")
    out = tmp_path / "out"
    code = main(["train", "--model", "cnn", "--data", str(tree), "--size", "32",
                 "--batch", "8", "--epochs", "2", "--seed", "1", "--out", str(out)])
    assert code == 0
    assert (out / "cnn.gckpt").exists() and (out / "history.svg").exists()


def test_precision_32_via_config_file(toy_tree, tmp_path):
    cfg = tmp_path / "fast.cfg"
    cfg.write_text("precision = 32\n")
    out = tmp_path / "out32"
    code = main(["train", "--model", "mlp", "--data", str(toy_tree), "--size", "16",
                 "--batch", "16", "--steps", "20", "--config", str(cfg),
                 "--out", str(out)])
    assert code == 0
    from gradecore import checkpoint as ckpt
    model = ckpt.load(out / "mlp.gckpt")
    assert model.param_tensors()[0].dtype == np.float32


def test_gdset_cache_accepted_as_data(tmp_path):
    from gradecore.data import save_cache
    ds = solid_color_dataset(n_per_class=4, size=8, seed=3)
    cache = tmp_path / "toy.gdset"
    save_cache(ds, cache)
    out = tmp_path / "out"
    code = main(["train", "--model", "knn", "--data", str(cache), "--size", "8",
                 "--out", str(out)])
    assert code == 0
    assert (out / "knn.gckpt").exists()

"""Command-line interface: subcommands, file outputs, exit codes."""

import csv
import json

import numpy as np
import pytest

from vegstrata.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(
        ["synth", "--plots", "8", "--seed", "5", "--out", str(out),
         "--density", "3"]
    )
    assert rc == 0
    return out


class TestSynth:
    def test_writes_corpus(self, data_dir):
        assert (data_dir / "plots.csv").exists()
        assert (data_dir / "labels.csv").exists()
        with open(data_dir / "labels.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["plot_id", "o_low", "o_medium", "o_high"]
        assert len(rows) == 9

    def test_reference_rasters_optional(self, tmp_path):
        rc = main(
            ["synth", "--plots", "2", "--seed", "1", "--out", str(tmp_path),
             "--density", "2", "--write-rasters"]
        )
        assert rc == 0
        assert len(list((tmp_path / "ref_rasters").glob("*.csv"))) == 6


class TestFitGamma:
    def test_mixture_json(self, data_dir, tmp_path):
        out = tmp_path / "mix.json"
        rc = main(["fit-gamma", "--data", str(data_dir), "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"ground", "nonground", "weights"}
        assert doc["ground"]["shape"] > 0
        assert sum(doc["weights"]) == pytest.approx(1.0)


class TestTrainPredictEval:
    def test_pipeline(self, data_dir, tmp_path):
        model = tmp_path / "net.npz"
        rc = main(
            ["train", "--data", str(data_dir), "--out", str(model),
             "--epochs", "2", "--m-points", "128", "--batch", "4"]
        )
        assert rc == 0
        assert model.exists()
        log = model.with_suffix(".log.csv")
        with open(log) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert set(rows[0]) == {"epoch", "data", "elevation", "entropy",
                                "total", "lr"}

        # Extract one plot and predict it.
        with open(data_dir / "plots.csv") as fh:
            rows = list(csv.DictReader(fh))
        pid = rows[0]["plot_id"]
        one = tmp_path / "one.csv"
        with open(one, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=rows[0].keys())
            writer.writeheader()
            writer.writerows(r for r in rows if r["plot_id"] == pid)
        pred_dir = tmp_path / "pred"
        rc = main(
            ["predict", "--model", str(model), "--plot", str(one),
             "--out", str(pred_dir), "--m-points", "128"]
        )
        assert rc == 0
        assert (pred_dir / "predictions.csv").exists()
        for stratum in ("low", "medium", "high"):
            assert (pred_dir / f"{pid}_{stratum}.csv").exists()
            assert (pred_dir / f"{pid}_{stratum}.pgm").exists()

    def test_eval_scores(self, data_dir, tmp_path, capsys):
        rc = main(
            ["eval", "--pred", str(data_dir / "labels.csv"),
             "--truth", str(data_dir / "labels.csv")]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "e_avg=0.0000" in out


class TestCV:
    def test_report_and_checkpoints(self, data_dir, tmp_path):
        out = tmp_path / "cv"
        rc = main(
            ["cv", "--data", str(data_dir), "--out", str(out),
             "--epochs", "1", "--m-points", "64", "--batch", "4"]
        )
        assert rc == 0
        with open(out / "report.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["fold", "e_low", "e_medium", "e_high", "e_avg"]
        assert rows[-1][0] == "pooled"
        assert len(rows) == 7  # header + 5 folds + pooled
        for f in range(5):
            assert (out / f"fold{f}.npz").exists()

    def test_handcrafted_method(self, data_dir, tmp_path):
        out = tmp_path / "cvh"
        rc = main(
            ["cv", "--data", str(data_dir), "--out", str(out),
             "--method", "handcrafted"]
        )
        assert rc == 0
        assert (out / "report.csv").exists()


class TestBaseline:
    def test_handcrafted_predictions(self, data_dir, tmp_path):
        out = tmp_path / "base.csv"
        rc = main(["baseline", "--data", str(data_dir), "--out", str(out)])
        assert rc == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 9


class TestConfigAndErrors:
    def test_config_file_with_flag_override(self, data_dir, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs = 1\nm_points = 64\nbatch = 4\n# comment\n")
        model = tmp_path / "net.npz"
        rc = main(
            ["train", "--data", str(data_dir), "--out", str(model),
             "--config", str(cfg), "--epochs", "2"]
        )
        assert rc == 0
        with open(model.with_suffix(".log.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2  # the flag overrode the config file

    def test_bad_config_key(self, data_dir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 3\n")
        rc = main(
            ["train", "--data", str(data_dir), "--out", str(tmp_path / "x.npz"),
             "--config", str(cfg)]
        )
        assert rc == 2

    def test_missing_data_exit_code(self, tmp_path):
        rc = main(
            ["fit-gamma", "--data", str(tmp_path / "nope"),
             "--out", str(tmp_path / "mix.json")]
        )
        assert rc != 0

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

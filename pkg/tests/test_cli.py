import json

import pytest
from click.testing import CliRunner

from retention_lab.cli import main
from retention_lab.records import FEATURES


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cohort = root / "cohort.csv"
    assert run("synth", "--n", 800, "--seed", 3, "--out", cohort).exit_code == 0
    res = run("train", "--cohort", cohort, "--out-dir", root / "out", "--iterations", 60)
    assert res.exit_code == 0, res.output
    return root, cohort


class TestSynth:
    def test_line_count_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        res = run("synth", "--n", 2000, "--seed", 7, "--base-rate", 0.5, "--out", a)
        assert res.exit_code == 0 and "2000 rows" in res.output
        assert len(a.read_text().splitlines()) == 2001
        run("synth", "--n", 2000, "--seed", 7, "--base-rate", 0.5, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_zero_rows_is_config_error(self, tmp_path):
        res = run("synth", "--n", 0, "--out", tmp_path / "x.csv")
        assert res.exit_code == 2
        assert not (tmp_path / "x.csv").exists()

    def test_config_file_then_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"n_students = 30\nsynth_seed = 1\ncohort = {tmp_path / 'c.csv'}\n")
        assert run("synth", "--config", cfg).exit_code == 0
        assert len((tmp_path / "c.csv").read_text().splitlines()) == 31
        assert run("synth", "--config", cfg, "--n", 12).exit_code == 0
        assert len((tmp_path / "c.csv").read_text().splitlines()) == 13


class TestTrain:
    def test_defaults_echo(self, workspace):
        root, _ = workspace
        model = json.loads((root / "out" / "model.json").read_text())
        cfg = model["config"]
        assert (cfg["max_bin"], cfg["learning_rate"], cfg["num_leaves"], cfg["min_data"]) == (
            512, 0.05, 10, 100)
        assert cfg["boost_from_average"] is True and cfg["objective"] == "binary"
        assert model["schema"] == list(FEATURES)

    def test_zero_iterations(self, workspace, tmp_path):
        _, cohort = workspace
        res = run("train", "--cohort", cohort, "--out-dir", tmp_path, "--iterations", 0)
        assert res.exit_code == 0
        model = json.loads((tmp_path / "model.json").read_text())
        assert model["trees"] == []
        assert (tmp_path / "history.csv").read_text() == "iteration,valid_logloss\n"

    def test_history_improves(self, workspace):
        root, _ = workspace
        lines = (root / "out" / "history.csv").read_text().splitlines()
        assert lines[0] == "iteration,valid_logloss" and len(lines) == 61
        first, last = float(lines[1].split(",")[1]), float(lines[-1].split(",")[1])
        assert last < first

    def test_degenerate_labels_are_data_error(self, tmp_path):
        path = tmp_path / "c.csv"
        header = ",".join([*FEATURES, "Abandono"])
        path.write_text(header + "\n" + "\n".join(",".join(["1"] * 15) for _ in range(20)) + "\n")
        res = run("train", "--cohort", path, "--out-dir", tmp_path, "--iterations", 5)
        assert res.exit_code == 3

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(",".join([*FEATURES, "Abandono"]) + "\n" + ",".join(["x"] * 15) + "\n")
        res = run("train", "--cohort", path, "--out-dir", tmp_path)
        assert res.exit_code == 3 and "line 2" in res.output

    def test_missing_cohort_is_config_error(self, tmp_path):
        assert run("train", "--out-dir", tmp_path).exit_code == 2


class TestEvaluate:
    def test_report_keys(self, workspace):
        root, cohort = workspace
        res = run("evaluate", "--cohort", cohort, "--out-dir", root / "out")
        assert res.exit_code == 0, res.output
        report = json.loads((root / "out" / "metrics.json").read_text())
        assert set(report) == {"accuracy", "precision", "recall", "f1", "roc_auc", "log_loss",
                               "threshold", "confusion"}
        assert sum(report["confusion"].values()) == 240

    def test_constant_predictor(self, workspace, tmp_path):
        _, cohort = workspace
        run("train", "--cohort", cohort, "--out-dir", tmp_path, "--iterations", 0,
            "--no-boost-from-average")
        assert run("evaluate", "--cohort", cohort, "--out-dir", tmp_path).exit_code == 0
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["log_loss"] == pytest.approx(0.693147, abs=1e-6)
        assert report["roc_auc"] == 0.5

    def test_seed_mismatch(self, workspace):
        root, cohort = workspace
        res = run("evaluate", "--cohort", cohort, "--out-dir", root / "out", "--seed", 1)
        assert res.exit_code == 2 and "seed" in res.output

    def test_other_cohort_rejected(self, workspace, tmp_path):
        root, _ = workspace
        other = tmp_path / "other.csv"
        run("synth", "--n", 800, "--seed", 4, "--out", other)
        res = run("evaluate", "--cohort", other, "--model", root / "out" / "model.json",
                  "--out-dir", tmp_path)
        assert res.exit_code == 3


class TestExplain:
    def test_bundle(self, workspace):
        root, cohort = workspace
        out = root / "out"
        res = run("explain", "--cohort", cohort, "--out-dir", out,
                  "--interactions", "TiempoFacultad,EdadUltimaActividad")
        assert res.exit_code == 0, res.output
        header = (out / "shap.csv").read_text().splitlines()[0].split(",")
        assert header == [f"{f}_shap" for f in FEATURES] + ["base_value"]
        assert len((out / "importance.csv").read_text().splitlines()) == 15
        values = [float(line.split(",")[1])
                  for line in (out / "importance.csv").read_text().splitlines()[1:]]
        assert values == sorted(values, reverse=True)
        for f in FEATURES:
            assert (out / "dependence" / f"{f}.csv").exists()
            assert (out / "dependence" / f"{f}.svg").read_text().startswith("<svg")
        pair = out / "interactions" / "TiempoFacultad__EdadUltimaActividad.csv"
        assert pair.read_text().splitlines()[0].count(",") == 2

    def test_single_leaf_model_has_zero_shap(self, workspace, tmp_path):
        _, cohort = workspace
        run("train", "--cohort", cohort, "--out-dir", tmp_path, "--iterations", 0)
        assert run("explain", "--cohort", cohort, "--out-dir", tmp_path).exit_code == 0
        rows = (tmp_path / "shap.csv").read_text().splitlines()[1:]
        assert all(set(r.split(",")[:-1]) == {"0"} for r in rows)

    @pytest.mark.parametrize("pair", ["Foo,Genero", "Genero", "Genero,Genero"])
    def test_bad_pair(self, workspace, tmp_path, pair):
        root, cohort = workspace
        res = run("explain", "--cohort", cohort, "--model", root / "out" / "model.json",
                  "--out-dir", tmp_path, "--interactions", pair)
        assert res.exit_code == 2
        assert not (tmp_path / "shap.csv").exists()

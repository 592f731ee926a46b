"""Acceptance criteria, one test each; the terminal summary prints PASS/FAIL per criterion."""

import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from retention_lab import shap as S
from retention_lab.binning import bin_features, bin_like
from retention_lab.cli import main
from retention_lab.gbdt import TrainConfig, logistic_gradients, split_indices, train
from retention_lab.metrics import accuracy, confusion, f1, log_loss, precision, recall, roc_auc
from retention_lab.records import FEATURES, SynthConfig, synth_cohort, to_arrays

from test_metrics import pair_count_auc
from treegen import random_ensemble, random_input

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def reference_run():
    """Calibrated cohort (n=2000, seed 7), 500 rounds, remaining parameters at their defaults."""
    start = time.perf_counter()
    X, y = to_arrays(synth_cohort(SynthConfig(n_students=2000, seed=7)))
    cfg = TrainConfig(num_iterations=500)
    tr, te = split_indices(len(y), cfg.split_ratio, cfg.seed)
    d_train = bin_features(X[tr], y[tr], cfg.max_bin)
    d_test = bin_like(X[te], y[te], d_train)
    model, history = train(d_train, d_test, cfg)
    auc = roc_auc(y[te], model.predict_proba(X[te]))
    elapsed = time.perf_counter() - start
    return dict(X=X, y=y, tr=tr, te=te, model=model, history=history, auc=auc, seconds=elapsed)


@pytest.mark.acceptance("1. SHAP local accuracy")
def test_local_accuracy(reference_run, record_property):
    model, X = reference_run["model"], reference_run["X"]
    assert len(model.trees) >= 200 and len(X) >= 1000
    start = time.perf_counter()
    phi, base = S.shap_values(model, X)
    seconds = time.perf_counter() - start
    gap = float(np.max(np.abs(base + phi.sum(axis=1) - model.predict_margin(X))))
    record_property("trees", len(model.trees))
    record_property("samples", len(X))
    record_property("max_gap", f"{gap:.2e}")
    record_property("seconds", f"{seconds:.1f}")
    assert gap <= 1e-6
    assert seconds < 30


@pytest.mark.acceptance("2. Oracle equivalence")
def test_oracle_equivalence(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    cases = 1000
    for _ in range(cases):
        m = random_ensemble(rng, n_features=5, max_depth=3)
        x = random_input(rng)
        fast, slow = S.tree_shap(m, x), S.brute_force_shapley(m, x)
        worst = max(worst, float(np.max(np.abs(fast.phi - slow.phi))))
    record_property("cases", cases)
    record_property("max_err", f"{worst:.2e}")
    assert worst <= 1e-9


@pytest.mark.acceptance("3. Interaction consistency")
def test_interaction_consistency(reference_run, record_property):
    model, X = reference_run["model"], reference_run["X"][reference_run["te"][:200]]
    inter, _ = S.shap_interaction_values(model, X)
    phi, _ = S.shap_values(model, X)
    asym = float(np.max(np.abs(inter - inter.transpose(0, 2, 1))))
    row_gap = float(np.max(np.abs(inter.sum(axis=2) - phi)))

    # stumps make the boosted model additive in the features
    y, tr = reference_run["y"], reference_run["tr"]
    d = bin_features(reference_run["X"][tr], y[tr])
    additive, _ = train(d, None, TrainConfig(num_iterations=100, num_leaves=2))
    add_inter, _ = S.shap_interaction_values(additive, X)
    off = ~np.eye(len(FEATURES), dtype=bool)
    off_max = float(np.max(np.abs(add_inter[:, off])))

    record_property("samples", len(X))
    record_property("asymmetry", f"{asym:.2e}")
    record_property("row_sum_gap", f"{row_gap:.2e}")
    record_property("additive_off_diag_max", off_max)
    assert len(X) == 200
    assert asym <= 1e-9
    assert row_gap <= 1e-6
    assert off_max == 0.0


def _margin_logloss(y, m):
    return math.log1p(math.exp(m)) - y * m


@pytest.mark.acceptance("4. Gradient correctness")
def test_gradient_finite_differences(record_property):
    grid = np.round(np.arange(-40, 41) / 10.0, 1)
    eps_g, eps_h = 1e-4, 1e-3
    worst_g = worst_h = 0.0
    for y in (0, 1):
        g, h = logistic_gradients(np.full(len(grid), y), grid)
        for m, gi, hi in zip(grid, g, h):
            f = lambda t: _margin_logloss(y, t)
            g_fd = (f(m + eps_g) - f(m - eps_g)) / (2 * eps_g)
            h_fd = (f(m + eps_h) - 2 * f(m) + f(m - eps_h)) / eps_h**2
            worst_g = max(worst_g, abs(gi - g_fd))
            worst_h = max(worst_h, abs(hi - h_fd))
    record_property("grid_points", 2 * len(grid))
    record_property("max_g_err", f"{worst_g:.2e}")
    record_property("max_h_err", f"{worst_h:.2e}")
    assert worst_g <= 1e-6 and worst_h <= 1e-6


@pytest.mark.acceptance("5. Metric suite")
def test_metric_suite(record_property):
    labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 1]
    probas = [0.8, 0.8, 0.2, 0.8, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2]
    assert confusion(labels, probas, 0.5) == (2, 1, 2, 5)
    cm = (2, 1, 1, 6)
    assert accuracy(cm) == 0.8
    assert precision(cm) == recall(cm) == f1(cm) == pytest.approx(2 / 3, abs=1e-15)
    assert roc_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    assert log_loss([1, 0], [0.75, 0.75]) == pytest.approx(0.836988, abs=1e-6)

    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 25, n) / 24.0
        assert roc_auc(y, s) == pair_count_auc(y, s)
    record_property("auc_oracle_instances", 100)


@pytest.mark.acceptance("6. Training sanity")
def test_training_sanity(reference_run, record_property):
    losses = np.array(reference_run["history"].train_logloss)
    worst_rise = float(np.max(np.diff(losses), initial=-np.inf))
    record_property("auc", f"{reference_run['auc']:.4f}")
    record_property("iterations", len(losses))
    record_property("max_step_increase", f"{worst_rise:.2e}")
    record_property("seconds", f"{reference_run['seconds']:.1f}")
    assert len(losses) == 500
    assert reference_run["auc"] >= 0.85
    assert worst_rise <= 1e-12
    assert reference_run["seconds"] < 60


@pytest.mark.acceptance("7. Dependence patterns")
def test_dependence_patterns(reference_run, record_property):
    model, X = reference_run["model"], reference_run["X"]
    phi, _ = S.shap_values(model, X)

    def mean_phi(name, low, high):
        return S.dependence_series(name, X, phi, FEATURES).mean_phi(low, high)

    checks = {
        "tenure_0_3": (mean_phi("TiempoFacultad", 0, 3), -1),
        "tenure_gt_6": (mean_phi("TiempoFacultad", np.nextafter(6, 7), np.inf), +1),
        "regulares_0_5": (mean_phi("NumeroRegulares", 0, 5), +1),
        "regulares_ge_14": (mean_phi("NumeroRegulares", 14, np.inf), -1),
        "reprobados_0_5": (mean_phi("NumerodeReprobados", 0, 5), -1),
    }
    for key, (value, _) in checks.items():
        record_property(key, f"{value:+.3f}")
    assert all(np.sign(value) == sign for value, sign in checks.values())


def _pipeline(root):
    runner = CliRunner()
    cohort = root / "cohort.csv"
    out = root / "report"
    steps = [
        ["synth", "--n", "2000", "--seed", "7", "--base-rate", "0.5", "--out", str(cohort)],
        ["train", "--cohort", str(cohort), "--out-dir", str(out), "--iterations", "500"],
        ["evaluate", "--cohort", str(cohort), "--out-dir", str(out)],
        ["explain", "--cohort", str(cohort), "--out-dir", str(out),
         "--interactions", "TiempoFacultad,EdadUltimaActividad"],
    ]
    for args in steps:
        res = runner.invoke(main, args, catch_exceptions=False)
        assert res.exit_code == 0, res.output
    files = sorted(p for p in root.rglob("*") if p.is_file())
    return {str(p.relative_to(root)): p.read_bytes() for p in files}


@pytest.mark.acceptance("8. Determinism")
def test_pipeline_determinism(tmp_path, record_property):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first, second = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    differing = [k for k in first if first[k] != second.get(k)]
    record_property("files", len(first))
    record_property("differing", len(differing))
    assert "report/model.json" in first and "report/metrics.json" in first
    assert set(first) == set(second)
    assert not differing

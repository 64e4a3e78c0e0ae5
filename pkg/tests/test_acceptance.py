"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside the pytest verdicts.
"""

import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from odanomaly.community import Partition, aggregate_by_partition, combo_partition, modularity
from odanomaly.config import load_run_config, run_config_from_dict
from odanomaly.core import read_matrix_csv
from odanomaly.density import chi_square_sf, gmm_fit
from odanomaly.evaluate import best_f1_sweep, confusion_metrics
from odanomaly.features.engine import (
    Affine,
    BinaryCrossEntropy,
    Flatten,
    GraphConv,
    Network,
    ReLU,
    Sigmoid,
    SoftmaxCrossEntropy,
    grad_check,
)
from odanomaly.ingest import ODTensor, build_calendar
from odanomaly.pipeline import run_pipeline

from conftest import days, feature_matrix
from test_community import brute_force_best_q, fixture_graphs, two_triangles
from test_density import chi2_sf_simpson
from test_evaluate import brute_force_best_f1, calendar_for, make_scores

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@contextmanager
def criterion(num, description):
    try:
        yield
    except Exception:
        print(f"\n[ACCEPTANCE {num:2d}] FAIL - {description}")
        raise
    print(f"\n[ACCEPTANCE {num:2d}] PASS - {description}")


def test_criterion_1_gradient_correctness():
    with criterion(1, "grad_check < 1e-4 for all six layer types, 10 seeds, < 10 s"):
        started = time.perf_counter()
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1, 1, (5, 4))
            y = rng.integers(0, 2, 5)
            t = rng.uniform(0.1, 0.9, (5, 3))
            # affine + softmax-CE
            net = Network([Affine(4, 2, "xavier", rng)])
            worst = max(worst, grad_check(net, SoftmaxCrossEntropy(), x, y, 1e-5))
            # ReLU stack
            net = Network([Affine(4, 6, "he", rng), ReLU(), Affine(6, 2, "xavier", rng)])
            worst = max(worst, grad_check(net, SoftmaxCrossEntropy(), x, y, 1e-5))
            # sigmoid + BCE
            net = Network([Affine(4, 3, "xavier", rng), Sigmoid()])
            worst = max(worst, grad_check(net, BinaryCrossEntropy(), x, t, 1e-5))
            # graph convolution on a 4-node path
            op = np.zeros((4, 4))
            for i in range(3):
                op[i, i + 1] = op[i + 1, i] = 1.0
            op += np.eye(4)
            d = 1.0 / np.sqrt(op.sum(axis=1))
            op = op * d[:, None] * d[None, :]
            h = rng.uniform(-1, 1, (3, 4, 2))
            yg = rng.integers(0, 2, 3)
            net = Network(
                [GraphConv(2, 3, op, rng), ReLU(), Flatten(), Affine(12, 2, "xavier", rng)]
            )
            worst = max(worst, grad_check(net, SoftmaxCrossEntropy(), h, yg, 1e-5))
        elapsed = time.perf_counter() - started
        assert worst < 1e-4, f"worst relative gradient error {worst}"
        assert elapsed < 10.0, f"gradient checks took {elapsed:.1f}s"


def test_criterion_2_pca_exactness():
    with criterion(2, "rank-3 PCA: reconstruction < 1e-8, orthonormal 1e-10, variances 1e-8"):
        from odanomaly.features.pca import pca_fit, pca_inverse, pca_transform

        rng = np.random.default_rng(21)
        basis = np.linalg.qr(rng.normal(size=(8, 3)))[0].T  # 3 orthonormal rows
        scores = rng.normal(0, [3.0, 2.0, 1.0], size=(50, 3))
        x = feature_matrix(scores @ basis + rng.uniform(-1, 1, 8))
        model = pca_fit(x, k=3)
        recon = pca_inverse(model, pca_transform(model, x))
        assert np.max(np.abs(recon.values - x.values)) < 1e-8
        gram = model.components @ model.components.T
        assert np.max(np.abs(gram - np.eye(3))) < 1e-10
        z = pca_transform(model, x)
        assert np.allclose(
            z.values.var(axis=0, ddof=1), model.explained_variance, atol=1e-8
        )


@contextmanager
def _quiet():
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def test_criterion_3_em_monotonicity_and_recovery():
    with criterion(3, "EM log-likelihood nondecreasing (1e-9); 10-sigma two-cluster recovery"):
        rng = np.random.default_rng(31)
        fixtures = [
            rng.normal(0, 1, (60, 3)),
            np.vstack([rng.normal(0, 1, (50, 2)), rng.normal(6, 0.5, (50, 2))]),
            np.vstack(
                [rng.normal(-4, 1, (40, 4)), rng.normal(0, 2, (40, 4)), rng.normal(5, 0.7, (40, 4))]
            ),
            rng.uniform(0, 1, (80, 5)),
        ]
        with _quiet():
            for i, data in enumerate(fixtures):
                for k in (1, 2, 3):
                    m = gmm_fit(feature_matrix(data), k, seed=i)
                    assert np.all(np.diff(m.log_likelihoods) >= -1e-9), f"fixture {i}, K={k}"
            sigma = 0.5
            mu1, mu2 = np.zeros(2), np.array([5.0, 0.0])  # separation 10 sigma
            pts = np.vstack(
                [rng.normal(mu1, sigma, (200, 2)), rng.normal(mu2, sigma, (200, 2))]
            )
            m = gmm_fit(feature_matrix(pts), 2, seed=0)
        order = np.argsort(m.means[:, 0])
        assert np.linalg.norm(m.means[order[0]] - mu1) < 0.1
        assert np.linalg.norm(m.means[order[1]] - mu2) < 0.1
        assert np.allclose(m.weights, 0.5, atol=0.05)


def test_criterion_4_chi_square_tail():
    with criterion(4, "chi-square tail within 1e-10 of quadrature; sf(4, 1) = 0.0455"):
        for dof in (1, 2, 5, 20):
            for x in np.linspace(0.0, 60.0, 61):
                mine = chi_square_sf(float(x), dof)
                oracle = chi2_sf_simpson(float(x), dof)
                assert abs(mine - oracle) < 1e-10, f"dof={dof} x={x}"
        assert abs(chi_square_sf(4.0, 1) - 0.0455) < 1e-4


def test_criterion_5_modularity_optimum():
    with criterion(5, "combo matches brute force on <=6-node fixtures; triangles Q=0.5; < 30 s"):
        started = time.perf_counter()
        for i, g in enumerate(fixture_graphs()):
            p = combo_partition(g, g.n_nodes, seed=0)
            assert modularity(g, p) == pytest.approx(
                brute_force_best_q(g), abs=1e-9
            ), f"fixture {i}"
        g2 = two_triangles()
        q = modularity(g2, combo_partition(g2, 6, seed=0))
        assert abs(q - 0.5) <= 1e-12
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"modularity suite took {elapsed:.1f}s"


def test_criterion_6_aggregation_conservation():
    with criterion(6, "community aggregation conserves per-day totals on 100 random tensors"):
        rng = np.random.default_rng(61)
        for _ in range(100):
            n = int(rng.integers(2, 10))
            d = int(rng.integers(1, 6))
            tensor = ODTensor(
                days(d), [f"n{i}" for i in range(n)], rng.uniform(0, 5, (d, n, n))
            )
            p = Partition.renumbered(rng.integers(0, n, n))
            agg = aggregate_by_partition(tensor, p)
            assert np.allclose(agg.day_totals(), tensor.day_totals(), atol=1e-9)


def test_criterion_7_f1_arithmetic():
    with criterion(7, "Table-row F1 arithmetic and sweep equals brute force on 50 fixtures"):
        # P=0.840, R=0.724 as integer confusion: 29 holidays, 21 TP, 4 FP
        scores = make_scores([0.5] * 100)
        dates = [s.date for s in scores]
        cal = build_calendar(dates, dates[:29])
        flags = set(dates[:21]) | set(dates[29:33])
        precision, recall, f1, _ = confusion_metrics(flags, cal)
        assert precision == pytest.approx(0.840, abs=5e-4)
        assert recall == pytest.approx(0.724, abs=5e-4)
        assert f1 == pytest.approx(0.778, abs=5e-4)
        rng = np.random.default_rng(71)
        for _ in range(50):
            ps = rng.uniform(0, 1, 50)
            scores = make_scores(ps)
            cal = calendar_for(scores, rng.choice(50, size=int(rng.integers(1, 9)), replace=False))
            assert best_f1_sweep(scores, cal, method="m").f1 == pytest.approx(
                brute_force_best_f1(scores, cal), abs=1e-12
            )


@pytest.fixture(scope="module")
def reference_runs(tmp_path_factory):
    """Run both reference pipelines once; shared by criteria 8 and 10."""
    base = tmp_path_factory.mktemp("reference")
    results = {}
    started = time.perf_counter()
    for name in ("reference_edge", "reference_node"):
        cfg = load_run_config(CONFIG_DIR / f"{name}.yaml")
        cfg.output_dir = str(base / name)
        manifest = run_pipeline(cfg)
        report_rows = {}
        report_csv = (base / name / "report.csv").read_text().splitlines()
        header = report_csv[0].split(",")
        for line in report_csv[1:]:
            cells = line.split(",")
            row = dict(zip(header, cells))
            report_rows[row["method"]] = float(row["f1"])
        results[name] = {
            "dir": base / name,
            "manifest": manifest,
            "f1": report_rows,
            "keys": cfg.method_keys(),
        }
    results["elapsed"] = time.perf_counter() - started
    return results


def test_criterion_8_end_to_end_qualitative(reference_runs):
    with criterion(8, "reference runs: MLP F1 >= 0.8, >= PCA, >= AE; GCN parity; < 5 min"):
        edge = reference_runs["reference_edge"]["f1"]
        mlp = edge["Discriminative MLP"]
        assert mlp >= 0.8, f"MLP best-F1 {mlp}"
        assert mlp >= edge["PCA"], f"MLP {mlp} < PCA {edge['PCA']}"
        assert mlp >= edge["Autoencoder"], f"MLP {mlp} < AE {edge['Autoencoder']}"
        node = reference_runs["reference_node"]["f1"]
        gcn_rows = {k: v for k, v in node.items() if k.startswith("Discriminative GCN")}
        assert len(gcn_rows) == 3  # one report per stacked-layer count
        gcn_best = max(gcn_rows.values())
        node_mlp = node["Discriminative MLP"]
        assert gcn_best >= node_mlp - 0.05, f"GCN {gcn_best} vs MLP {node_mlp}"
        assert reference_runs["elapsed"] < 300.0


def test_criterion_9_run_determinism(tmp_path):
    with criterion(9, "two identical runs produce byte-identical score CSVs and reports"):
        raw = {
            "dataset": {
                "synthetic": {
                    "n_nodes": 10, "n_days": 60, "seed": 5, "n_anomalies": 5,
                    "weekday_base_flow": 200.0, "noise_scale": 0.05,
                    "anomaly_strength": 0.5, "n_blocks": 5,
                }
            },
            "representation": "edge",
            "community": {"max_communities": 8, "seed": 2},
            "methods": ["pca", "ae", "mlp"],
            "train": {
                "mlp": {"seed": 3, "epochs": 25, "batch_size": 16},
                "ae": {"seed": 4, "epochs": 25, "batch_size": 16},
            },
            "gmm": {"k": 2, "seed": 4},
            "output_dir": str(tmp_path / "runA"),
        }
        run_pipeline(run_config_from_dict(raw))
        out = tmp_path / "runA"
        watched = sorted(
            p.name for p in out.iterdir() if p.name.startswith(("scores_", "report"))
        )
        first = {name: (out / name).read_bytes() for name in watched}
        shutil.rmtree(out)
        run_pipeline(run_config_from_dict(raw))
        for name in watched:
            assert (out / name).read_bytes() == first[name], name


def test_criterion_10_latent_width_contract(reference_runs):
    with criterion(10, "every method's latent has exactly 20 columns on every run"):
        for name in ("reference_edge", "reference_node"):
            run = reference_runs[name]
            for key in run["keys"]:
                path = run["dir"] / f"latent_{key}.csv"
                with open(path, encoding="utf-8", newline="") as fh:
                    fm = read_matrix_csv(fh)
                assert fm.n_dims == 20, f"{name}/{key} latent width {fm.n_dims}"

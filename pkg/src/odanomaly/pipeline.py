"""Stage-by-stage pipeline execution over persisted artifacts.

Every stage reads its inputs from files and writes its outputs to files,
so any suffix of the pipeline can be re-run from persisted intermediates
and reproduce identical results. All file writes are atomic
(write-temp-then-rename); a failed run leaves a `.partial` marker naming
the stage that aborted.
"""

from __future__ import annotations

import io
import os
import time
from pathlib import Path

import yaml

from . import community as comm
from . import density, evaluate, ingest
from .config import RunConfig, config_hash, method_label
from .core import read_matrix_csv, write_matrix_csv
from .errors import ConfigError, DataError, OdanomalyError
from .features import (
    ae_encode,
    ae_train,
    flatten_edges,
    gcn_latent,
    gcn_train,
    mlp_latent,
    mlp_train,
    pca_fit,
    pca_transform,
)
from .graph import build_physical_graph, normalize_adjacency, write_edge_csv


def artifact_paths(outdir: Path) -> dict[str, Path]:
    return {
        "trips": outdir / "trips.csv",
        "nodes": outdir / "nodes.csv",
        "holidays": outdir / "holidays.csv",
        "edges": outdir / "edges.csv",
        "tensor": outdir / "tensor.csv",
        "calendar": outdir / "calendar.csv",
        "partition": outdir / "partition.csv",
        "aggregated": outdir / "aggregated.csv",
        "report_csv": outdir / "report.csv",
        "report_text": outdir / "report.txt",
        "manifest": outdir / "manifest.yaml",
    }


def method_artifacts(outdir: Path, key: str) -> dict[str, Path]:
    return {
        "latent": outdir / f"latent_{key}.csv",
        "model": outdir / f"model_{key}.txt",
        "gmm": outdir / f"gmm_{key}.txt",
        "scores": outdir / f"scores_{key}.csv",
        "days": outdir / f"days_{key}.csv",
    }


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_csv(path: Path, writer_fn) -> None:
    buf = io.StringIO()
    writer_fn(buf)
    atomic_write_text(path, buf.getvalue())


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(f"missing artifact {path.name}; run the {producer} stage first")
    return path


# ---------------------------------------------------------------------------
# Stages


def stage_synth(cfg: RunConfig, outdir: Path) -> None:
    """Write the synthetic dataset files (trips/nodes/holidays/edges)."""
    if not cfg.is_synthetic:
        raise ConfigError("synth stage requires a synthetic dataset config")
    tensor, calendar = ingest.generate_synthetic(cfg.dataset, cfg.weekend_days)
    paths = artifact_paths(outdir)
    _write_csv(paths["trips"], lambda s: ingest.write_trip_csv(tensor, s))

    def write_nodes(s):
        s.write("node_id,name\n")
        for node in tensor.node_ids:
            s.write(f"{node},\n")

    _write_csv(paths["nodes"], write_nodes)

    def write_holidays(s):
        s.write("date,label\n")
        for day in sorted(calendar.holidays()):
            s.write(f"{day.isoformat()},planted\n")

    _write_csv(paths["holidays"], write_holidays)
    graph = ingest.synthetic_physical_graph(cfg.dataset)
    _write_csv(paths["edges"], lambda s: write_edge_csv(graph, s))


def _dataset_files(cfg: RunConfig, outdir: Path) -> dict[str, Path | None]:
    paths = artifact_paths(outdir)
    if cfg.is_synthetic:
        return {
            "trips": paths["trips"],
            "nodes": paths["nodes"],
            "holidays": paths["holidays"],
            "edges": paths["edges"],
        }
    ds = cfg.dataset
    return {
        "trips": Path(ds.trips),
        "nodes": Path(ds.nodes),
        "holidays": Path(ds.holidays) if ds.holidays else None,
        "edges": Path(ds.edges) if ds.edges else None,
    }


def stage_ingest(cfg: RunConfig, outdir: Path) -> None:
    """Parse trips into the raw tensor and build the labeled calendar."""
    files = _dataset_files(cfg, outdir)
    trips = _require(files["trips"], "synth")
    with open(files["nodes"], encoding="utf-8", newline="") as fh:
        registry = ingest.read_node_registry(fh)
    with open(trips, encoding="utf-8", newline="") as fh:
        tensor = ingest.parse_trip_records(fh, registry)
    holidays: list = []
    if files["holidays"] and files["holidays"].exists():
        with open(files["holidays"], encoding="utf-8", newline="") as fh:
            holidays = ingest.read_holiday_csv(fh)
    calendar = ingest.build_calendar(tensor.dates, holidays, cfg.weekend_days)
    paths = artifact_paths(outdir)
    _write_csv(paths["tensor"], lambda s: ingest.write_flow_csv(tensor, s))
    _write_csv(paths["calendar"], lambda s: ingest.write_calendar_csv(calendar, s))


def stage_aggregate(cfg: RunConfig, outdir: Path) -> int:
    """Normalize, partition the mean graph, aggregate (edge config only).

    Returns the achieved community count.
    """
    paths = artifact_paths(outdir)
    with open(_require(paths["tensor"], "ingest"), encoding="utf-8", newline="") as fh:
        tensor = ingest.read_flow_csv(fh)
    normalized = ingest.normalize_spatial(tensor)
    graph = comm.mean_graph(normalized)
    partition = comm.combo_partition(
        graph, cfg.community.max_communities, cfg.community.seed
    )
    aggregated = comm.aggregate_by_partition(normalized, partition)
    _write_csv(
        paths["partition"],
        lambda s: comm.write_partition_csv(partition, tensor.node_ids, s),
    )
    _write_csv(paths["aggregated"], lambda s: ingest.write_flow_csv(aggregated, s))
    return partition.n_communities


def _feature_inputs(cfg: RunConfig, outdir: Path):
    """The day-indexed input matrix for the configured representation."""
    paths = artifact_paths(outdir)
    if cfg.representation == "edge":
        with open(
            _require(paths["aggregated"], "aggregate"), encoding="utf-8", newline=""
        ) as fh:
            aggregated = ingest.read_flow_csv(fh)
        return flatten_edges(aggregated), aggregated.node_ids
    with open(_require(paths["tensor"], "ingest"), encoding="utf-8", newline="") as fh:
        tensor = ingest.read_flow_csv(fh)
    return ingest.sum_normalize_rows(ingest.node_features(tensor)), tensor.node_ids


def stage_features(cfg: RunConfig, outdir: Path) -> None:
    """Train every configured method and persist models plus latents."""
    paths = artifact_paths(outdir)
    with open(_require(paths["calendar"], "ingest"), encoding="utf-8", newline="") as fh:
        calendar = ingest.read_calendar_csv(fh)
    x, node_ids = _feature_inputs(cfg, outdir)
    if calendar.dates != x.dates:
        raise DataError("calendar and feature dates are out of sync")
    labels = calendar.weekday_class

    adjacency = None
    if any(k.startswith("gcn_k") for k in cfg.method_keys()):
        edges = _dataset_files(cfg, outdir)["edges"]
        with open(_require(edges, "synth"), encoding="utf-8", newline="") as fh:
            graph = build_physical_graph(fh, node_ids)
        adjacency = normalize_adjacency(graph)

    for key in cfg.method_keys():
        art = method_artifacts(outdir, key)
        if key == "pca":
            model = pca_fit(x)
            latent = pca_transform(model, x)
        elif key == "ae":
            model = ae_train(x, cfg.train["ae"])
            latent = ae_encode(model, x)
        elif key == "mlp":
            model = mlp_train(x, labels, cfg.train["mlp"])
            latent = mlp_latent(model, x)
        else:
            k_layers = int(key[5:])
            model = gcn_train(x, adjacency, labels, cfg.train["gcn"], k_layers=k_layers)
            latent = gcn_latent(model, x)
        tmp = art["model"].with_name(art["model"].name + ".tmp")
        model.save(tmp)
        os.replace(tmp, art["model"])
        _write_csv(art["latent"], lambda s, z=latent: write_matrix_csv(z, s))


def stage_detect(cfg: RunConfig, outdir: Path) -> dict[str, int]:
    """Fit the GMM per method and persist models plus day scores.

    Returns the achieved K per method key.
    """
    achieved: dict[str, int] = {}
    for key in cfg.method_keys():
        art = method_artifacts(outdir, key)
        with open(_require(art["latent"], "features"), encoding="utf-8", newline="") as fh:
            latent = read_matrix_csv(fh)
        if cfg.gmm.k == "bic":
            model, _ = density.gmm_fit_bic(latent, seed=cfg.gmm.seed)
        else:
            model = density.gmm_fit(latent, int(cfg.gmm.k), seed=cfg.gmm.seed)
        scores = density.score_days(model, latent)
        tmp = art["gmm"].with_name(art["gmm"].name + ".tmp")
        model.save(tmp)
        os.replace(tmp, art["gmm"])
        _write_csv(art["scores"], lambda s: density.write_scores_csv(scores, s))
        achieved[key] = model.n_components
    return achieved


def stage_evaluate(cfg: RunConfig, outdir: Path) -> list[evaluate.DetectionReport]:
    """Best-F1 sweep per method; renders the combined report files."""
    paths = artifact_paths(outdir)
    with open(_require(paths["calendar"], "ingest"), encoding="utf-8", newline="") as fh:
        calendar = ingest.read_calendar_csv(fh)
    reports = []
    for key in cfg.method_keys():
        art = method_artifacts(outdir, key)
        with open(_require(art["scores"], "detect"), encoding="utf-8", newline="") as fh:
            scores = density.read_scores_csv(fh)
        gmm_model = density.GmmModel.load(art["gmm"]) if art["gmm"].exists() else None
        report = evaluate.best_f1_sweep(
            scores,
            calendar,
            method=method_label(key),
            gmm_k=None if gmm_model is None else gmm_model.n_components,
            seed=cfg.gmm.seed,
        )
        _write_csv(art["days"], lambda s, r=report: evaluate.write_day_rows_csv(r, s))
        reports.append(report)
    _write_csv(paths["report_csv"], lambda s: evaluate.render_report_csv(reports, s))
    atomic_write_text(paths["report_text"], evaluate.render_report_text(reports))
    return reports


# ---------------------------------------------------------------------------
# End-to-end run


def run_pipeline(cfg: RunConfig) -> dict:
    """Execute all stages, write the manifest, return it as a dict."""
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    marker = outdir / ".partial"
    paths = artifact_paths(outdir)

    stage_list: list[tuple[str, object]] = []
    if cfg.is_synthetic:
        stage_list.append(("synth", lambda: stage_synth(cfg, outdir)))
    stage_list.append(("ingest", lambda: stage_ingest(cfg, outdir)))
    if cfg.representation == "edge":
        stage_list.append(("aggregate", lambda: stage_aggregate(cfg, outdir)))
    stage_list.append(("features", lambda: stage_features(cfg, outdir)))
    stage_list.append(("detect", lambda: stage_detect(cfg, outdir)))
    stage_list.append(("evaluate", lambda: stage_evaluate(cfg, outdir)))

    results: dict[str, object] = {}
    timings: dict[str, float] = {}
    for name, fn in stage_list:
        atomic_write_text(marker, f"running stage {name}\n")
        started = time.perf_counter()
        try:
            results[name] = fn()
        except OdanomalyError as exc:
            atomic_write_text(marker, f"failed at stage {name}: {exc}\n")
            raise type(exc)(f"stage {name}: {exc}") from exc
        except Exception:
            atomic_write_text(marker, f"failed at stage {name}\n")
            raise
        timings[name] = time.perf_counter() - started

    artifacts = {
        name: str(path)
        for name, path in paths.items()
        if name != "manifest" and path.exists()
    }
    for key in cfg.method_keys():
        for name, path in method_artifacts(outdir, key).items():
            if path.exists():
                artifacts[f"{name}_{key}"] = str(path)

    seeds = {"community": cfg.community.seed, "gmm": cfg.gmm.seed}
    for m, tc in cfg.train.items():
        seeds[f"train_{m}"] = tc.seed
    if cfg.is_synthetic:
        seeds["dataset"] = cfg.dataset.seed

    manifest = {
        "config_hash": config_hash(cfg),
        "representation": cfg.representation,
        "methods": cfg.method_keys(),
        "seeds": seeds,
        "achieved_communities": results.get("aggregate"),
        "achieved_gmm_k": results.get("detect"),
        "artifacts": artifacts,
        "timings_sec": {k: round(v, 6) for k, v in timings.items()},
    }
    atomic_write_text(paths["manifest"], yaml.safe_dump(manifest, sort_keys=True))
    if marker.exists():
        marker.unlink()
    return manifest


def evaluate_standalone(scores_path, holidays_path, method: str = "scores"):
    """Re-evaluate persisted scores against a holiday file."""
    with open(scores_path, encoding="utf-8", newline="") as fh:
        scores = density.read_scores_csv(fh)
    with open(holidays_path, encoding="utf-8", newline="") as fh:
        holidays = ingest.read_holiday_csv(fh)
    calendar = ingest.build_calendar([s.date for s in scores], holidays)
    return evaluate.best_f1_sweep(scores, calendar, method=method)

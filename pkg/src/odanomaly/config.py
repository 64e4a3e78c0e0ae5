"""Declarative run configuration (YAML) and its semantic hash.

A run file pins everything a pipeline invocation depends on: dataset
source, representation, community settings, methods with their training
configs, GMM settings, and the output directory. Every seed is explicit
and defaults to DEFAULT_SEED, so the single source of nondeterminism is
the configuration itself.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .features.engine import TrainConfig
from .ingest import DEFAULT_WEEKEND_DAYS, SyntheticConfig, choose_anomaly_dates

DEFAULT_SEED = 7
VALID_METHODS = ("pca", "ae", "mlp", "gcn")

DEFAULT_TRAIN = {
    "mlp": dict(epochs=100, learning_rate=0.001, weight_decay=0.001),
    "ae": dict(epochs=100, learning_rate=0.01, weight_decay=0.001),
    "gcn": dict(epochs=100, learning_rate=0.001, weight_decay=0.001),
}


@dataclass
class FileDataset:
    """Paths to user-provided CSVs (relative paths resolve against the
    run file's directory)."""

    trips: str
    nodes: str
    holidays: str | None = None
    edges: str | None = None


@dataclass
class CommunitySettings:
    max_communities: int = 10
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.max_communities < 1:
            raise ConfigError(f"max_communities must be >= 1, got {self.max_communities}")


@dataclass
class GmmSettings:
    k: int | str = "bic"  # an integer, or "bic" for K selected in 1..5
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if isinstance(self.k, str):
            if self.k != "bic":
                raise ConfigError(f"gmm k must be an integer or 'bic', got {self.k!r}")
        elif self.k < 1:
            raise ConfigError(f"gmm k must be >= 1, got {self.k}")


@dataclass
class RunConfig:
    dataset: SyntheticConfig | FileDataset
    representation: str = "edge"
    community: CommunitySettings = field(default_factory=CommunitySettings)
    methods: list[str] = field(default_factory=lambda: ["pca", "ae", "mlp"])
    gcn_layers: list[int] = field(default_factory=lambda: [1])
    train: dict[str, TrainConfig] = field(default_factory=dict)
    gmm: GmmSettings = field(default_factory=GmmSettings)
    output_dir: str = "run"
    weekend_days: frozenset[int] = DEFAULT_WEEKEND_DAYS

    def __post_init__(self) -> None:
        if self.representation not in ("edge", "node"):
            raise ConfigError(
                f"representation must be 'edge' or 'node', got {self.representation!r}"
            )
        if not self.methods:
            raise ConfigError("methods list is empty")
        unknown = [m for m in self.methods if m not in VALID_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; valid: {list(VALID_METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate entries in methods")
        if "gcn" in self.methods:
            if self.representation != "node":
                raise ConfigError("gcn requires representation: node")
            if isinstance(self.dataset, FileDataset) and not self.dataset.edges:
                raise ConfigError("gcn requires a physical-edge file in the dataset")
            if not self.gcn_layers or any(k < 1 for k in self.gcn_layers):
                raise ConfigError(f"gcn_layers must be positive ints, got {self.gcn_layers}")
        for m in self.methods:
            if m != "pca" and m not in self.train:
                self.train[m] = TrainConfig(seed=DEFAULT_SEED, **DEFAULT_TRAIN[m])

    @property
    def is_synthetic(self) -> bool:
        return isinstance(self.dataset, SyntheticConfig)

    def method_keys(self) -> list[str]:
        """Expanded per-run method keys; gcn fans out over its layer sweep."""
        keys: list[str] = []
        for m in self.methods:
            if m == "gcn":
                keys.extend(f"gcn_k{k}" for k in self.gcn_layers)
            else:
                keys.append(m)
        return keys


METHOD_LABELS = {
    "pca": "PCA",
    "ae": "Autoencoder",
    "mlp": "Discriminative MLP",
}


def method_label(key: str) -> str:
    if key.startswith("gcn_k"):
        return f"Discriminative GCN (k={key[5:]})"
    return METHOD_LABELS.get(key, key)


# ---------------------------------------------------------------------------
# YAML loading


def _as_date(value) -> dt.date:
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


def _synthetic_from_dict(raw: dict) -> SyntheticConfig:
    raw = dict(raw)
    if "start_date" in raw:
        raw["start_date"] = _as_date(raw["start_date"])
    n_anomalies = raw.pop("n_anomalies", None)
    anomaly_seed = raw.pop("anomaly_seed", None)
    if "anomaly_dates" in raw:
        if n_anomalies is not None:
            raise ConfigError("give either anomaly_dates or n_anomalies, not both")
        raw["anomaly_dates"] = frozenset(_as_date(d) for d in raw["anomaly_dates"])
    elif n_anomalies is not None:
        raw["anomaly_dates"] = choose_anomaly_dates(
            int(n_anomalies),
            int(raw["n_days"]),
            int(raw["seed"] if anomaly_seed is None else anomaly_seed),
            raw.get("start_date", dt.date(2017, 1, 2)),
        )
    try:
        return SyntheticConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic dataset config: {exc}") from None


def _train_from_dict(raw: dict, method: str) -> TrainConfig:
    merged = dict(DEFAULT_TRAIN.get(method, DEFAULT_TRAIN["mlp"]))
    merged["seed"] = DEFAULT_SEED
    merged.update(raw)
    try:
        return TrainConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad train config for {method!r}: {exc}") from None


def run_config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a mapping")
    raw = dict(raw)
    dataset_raw = raw.pop("dataset", None)
    if not isinstance(dataset_raw, dict):
        raise ConfigError("run config needs a 'dataset' mapping")
    if ("synthetic" in dataset_raw) == ("files" in dataset_raw):
        raise ConfigError("dataset must contain exactly one of 'synthetic' or 'files'")
    if "synthetic" in dataset_raw:
        dataset: SyntheticConfig | FileDataset = _synthetic_from_dict(
            dataset_raw["synthetic"]
        )
    else:
        files = dict(dataset_raw["files"])
        if base_dir is not None:
            for key in ("trips", "nodes", "holidays", "edges"):
                if files.get(key):
                    files[key] = str((base_dir / files[key]).resolve())
        try:
            dataset = FileDataset(**files)
        except TypeError as exc:
            raise ConfigError(f"bad files dataset config: {exc}") from None

    community = CommunitySettings(**raw.pop("community", {}))
    gmm = GmmSettings(**raw.pop("gmm", {}))
    train = {
        m: _train_from_dict(cfg, m) for m, cfg in raw.pop("train", {}).items()
    }
    weekend = raw.pop("weekend_days", None)
    weekend_days = (
        DEFAULT_WEEKEND_DAYS if weekend is None else frozenset(int(d) for d in weekend)
    )
    output_dir = raw.pop("output_dir", "run")
    if base_dir is not None:
        output_dir = str((base_dir / output_dir).resolve())
    known = {"representation", "methods", "gcn_layers"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    try:
        return RunConfig(
            dataset=dataset,
            community=community,
            gmm=gmm,
            train=train,
            output_dir=output_dir,
            weekend_days=weekend_days,
            **{k: raw[k] for k in known if k in raw},
        )
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"run config not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return run_config_from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Semantic hash


def _canonical(value):
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, frozenset):
        return sorted(_canonical(v) for v in value)
    if isinstance(value, dt.date):
        return value.isoformat()
    return value


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 over the canonicalized semantic fields.

    The output directory is a location, not a semantic choice, so it is
    excluded: rerunning the same experiment elsewhere hashes identically.
    """
    payload = dataclasses.asdict(cfg)
    payload.pop("output_dir")
    payload["dataset_kind"] = "synthetic" if cfg.is_synthetic else "files"
    blob = json.dumps(_canonical(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()

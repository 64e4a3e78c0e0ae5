"""Trained feature learners: autoencoder, discriminative MLP, and the
graph-convolutional variant.

All three compress each day to a 20-wide latent row. The discriminative
models train on the weekday-vs-weekend auxiliary task with softmax
cross-entropy; the autoencoder reconstructs its input under elementwise
binary cross-entropy. The latent is the post-ReLU activation of the
20-wide layer in every case.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
import numpy as np

from ..core import FeatureMatrix
from ..errors import ConfigError, DataError
from ..graph import NormalizedAdjacency
from .. import persist
from .engine import (
    LATENT_DIM,
    Affine,
    BinaryCrossEntropy,
    Flatten,
    GraphConv,
    Network,
    ReLU,
    Sigmoid,
    SoftmaxCrossEntropy,
    TrainConfig,
    train_network,
)

DEFAULT_MLP_HIDDEN = (128, 64)
DEFAULT_AE_HIDDEN = (128, 64)
DEFAULT_GCN_NODE_WIDTH = 8
DEFAULT_GCN_HEAD_HIDDEN = 64


def _check_labels(labels, n_rows: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n_rows,):
        raise DataError(f"need {n_rows} labels aligned with rows, got shape {labels.shape}")
    if not np.all(np.isin(labels, [0, 1])):
        raise DataError("labels must be binary (0=weekday, 1=weekend)")
    return labels


def _assert_latent(values: np.ndarray) -> np.ndarray:
    if values.shape[1] != LATENT_DIM:
        raise DataError(f"latent width {values.shape[1]} != {LATENT_DIM}")
    return values


# ---------------------------------------------------------------------------
# Discriminative MLP


def _mlp_network(n_inputs: int, hidden: tuple[int, int], rng) -> Network:
    h1, h2 = hidden
    return Network(
        [
            Affine(n_inputs, h1, "he", rng),
            ReLU(),
            Affine(h1, h2, "he", rng),
            ReLU(),
            Affine(h2, LATENT_DIM, "he", rng),
            ReLU(),
            Affine(LATENT_DIM, 2, "xavier", rng),
        ]
    )


@dataclass
class MlpModel:
    """Four affine layers, widths F -> h1 -> h2 -> 20 -> 2."""

    network: Network = field(repr=False)
    n_inputs: int
    hidden: tuple[int, int]
    config: TrainConfig
    loss_log: list[float] = field(default_factory=list, repr=False)
    accuracy_log: list[float] = field(default_factory=list, repr=False)

    @property
    def latent_cut(self) -> int:
        return len(self.network.layers) - 1

    def save(self, path) -> None:
        _save_network(
            path,
            "mlp",
            self.network,
            {
                "n_inputs": self.n_inputs,
                "hidden": list(self.hidden),
                "config": dataclasses.asdict(self.config),
            },
            self.loss_log,
            self.accuracy_log,
        )

    @classmethod
    def load(cls, path) -> "MlpModel":
        meta, arrays, loss_log, acc_log = _load_network_parts(path, "mlp")
        cfg = TrainConfig(**meta["config"])
        model = cls(
            _mlp_network(meta["n_inputs"], tuple(meta["hidden"]), np.random.default_rng(0)),
            meta["n_inputs"],
            tuple(meta["hidden"]),
            cfg,
            loss_log,
            acc_log,
        )
        _restore_params(model.network, arrays)
        return model


def mlp_train(
    x: FeatureMatrix,
    weekday_labels,
    cfg: TrainConfig,
    hidden: tuple[int, int] = DEFAULT_MLP_HIDDEN,
) -> MlpModel:
    """Train the weekday/weekend classifier with softmax cross-entropy."""
    labels = _check_labels(weekday_labels, x.n_days)
    rng = np.random.default_rng(cfg.seed)
    net = _mlp_network(x.n_dims, hidden, rng)
    loss_log, acc_log = train_network(
        net, SoftmaxCrossEntropy(), x.values, labels, cfg, track_accuracy=True
    )
    return MlpModel(net, x.n_dims, hidden, cfg, loss_log, acc_log)


def mlp_latent(model: MlpModel, x: FeatureMatrix) -> FeatureMatrix:
    """Forward pass truncated after the post-ReLU 20-wide layer."""
    if x.n_dims != model.n_inputs:
        raise DataError(f"model expects {model.n_inputs} columns, got {x.n_dims}")
    return x.with_values(_assert_latent(model.network.forward(x.values, upto=model.latent_cut)))


# ---------------------------------------------------------------------------
# Autoencoder


def _ae_network(n_inputs: int, hidden: tuple[int, int], rng) -> Network:
    e1, e2 = hidden
    return Network(
        [
            Affine(n_inputs, e1, "he", rng),
            ReLU(),
            Affine(e1, e2, "he", rng),
            ReLU(),
            Affine(e2, LATENT_DIM, "he", rng),
            ReLU(),
            Affine(LATENT_DIM, e2, "he", rng),
            ReLU(),
            Affine(e2, e1, "he", rng),
            ReLU(),
            Affine(e1, n_inputs, "xavier", rng),
            Sigmoid(),
        ]
    )


@dataclass
class AeModel:
    """Mirrored encoder/decoder with a 20-wide bottleneck, sigmoid output."""

    network: Network = field(repr=False)
    n_inputs: int
    hidden: tuple[int, int]
    config: TrainConfig
    loss_log: list[float] = field(default_factory=list, repr=False)

    @property
    def encoder_cut(self) -> int:
        return 6  # Affine+ReLU x3: up to and including the bottleneck ReLU

    def save(self, path) -> None:
        _save_network(
            path,
            "ae",
            self.network,
            {
                "n_inputs": self.n_inputs,
                "hidden": list(self.hidden),
                "config": dataclasses.asdict(self.config),
            },
            self.loss_log,
            [],
        )

    @classmethod
    def load(cls, path) -> "AeModel":
        meta, arrays, loss_log, _ = _load_network_parts(path, "ae")
        cfg = TrainConfig(**meta["config"])
        model = cls(
            _ae_network(meta["n_inputs"], tuple(meta["hidden"]), np.random.default_rng(0)),
            meta["n_inputs"],
            tuple(meta["hidden"]),
            cfg,
            loss_log,
        )
        _restore_params(model.network, arrays)
        return model


def ae_train(
    x: FeatureMatrix,
    cfg: TrainConfig,
    hidden: tuple[int, int] = DEFAULT_AE_HIDDEN,
) -> AeModel:
    """Train the reconstruction autoencoder with elementwise BCE.

    Inputs must lie in [0, 1] (guaranteed upstream by the sum
    normalization); anything else makes the BCE target ill-defined.
    """
    if np.any(x.values < 0.0) or np.any(x.values > 1.0):
        raise DataError("autoencoder inputs must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    net = _ae_network(x.n_dims, hidden, rng)
    loss_log, _ = train_network(net, BinaryCrossEntropy(), x.values, x.values, cfg)
    return AeModel(net, x.n_dims, hidden, cfg, loss_log)


def ae_encode(model: AeModel, x: FeatureMatrix) -> FeatureMatrix:
    """Deterministic forward pass through the encoder only."""
    if x.n_dims != model.n_inputs:
        raise DataError(f"model expects {model.n_inputs} columns, got {x.n_dims}")
    return x.with_values(_assert_latent(model.network.forward(x.values, upto=model.encoder_cut)))


# ---------------------------------------------------------------------------
# Discriminative GCN


def _gcn_network(
    n_nodes: int,
    k_layers: int,
    node_width: int,
    head_hidden: int,
    operator: np.ndarray,
    rng,
) -> Network:
    layers: list = []
    width = 2
    for _ in range(k_layers):
        layers.extend([GraphConv(width, node_width, operator, rng), ReLU()])
        width = node_width
    layers.append(Flatten())
    layers.extend(
        [
            Affine(n_nodes * node_width, head_hidden, "he", rng),
            ReLU(),
            Affine(head_hidden, LATENT_DIM, "he", rng),
            ReLU(),
            Affine(LATENT_DIM, 2, "xavier", rng),
        ]
    )
    return Network(layers)


@dataclass
class GcnModel:
    """k graph-convolution layers over a fixed operator, then an MLP head."""

    network: Network = field(repr=False)
    adjacency: NormalizedAdjacency = field(repr=False)
    k_layers: int
    node_width: int
    head_hidden: int
    config: TrainConfig
    loss_log: list[float] = field(default_factory=list, repr=False)
    accuracy_log: list[float] = field(default_factory=list, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.n_nodes

    @property
    def latent_cut(self) -> int:
        return len(self.network.layers) - 1

    def save(self, path) -> None:
        meta = {
            "k_layers": self.k_layers,
            "node_width": self.node_width,
            "head_hidden": self.head_hidden,
            "n_nodes": self.n_nodes,
            "config": dataclasses.asdict(self.config),
        }
        extra = {"operator": self.adjacency.matrix}
        _save_network(
            path, "gcn", self.network, meta, self.loss_log, self.accuracy_log, extra
        )

    @classmethod
    def load(cls, path) -> "GcnModel":
        meta, arrays, loss_log, acc_log = _load_network_parts(path, "gcn")
        adjacency = NormalizedAdjacency(arrays.pop("operator"))
        cfg = TrainConfig(**meta["config"])
        model = cls(
            _gcn_network(
                meta["n_nodes"],
                meta["k_layers"],
                meta["node_width"],
                meta["head_hidden"],
                adjacency.matrix,
                np.random.default_rng(0),
            ),
            adjacency,
            meta["k_layers"],
            meta["node_width"],
            meta["head_hidden"],
            cfg,
            loss_log,
            acc_log,
        )
        _restore_params(model.network, arrays)
        return model


def _node_blocks(x: FeatureMatrix, n_nodes: int) -> np.ndarray:
    if x.n_dims != 2 * n_nodes:
        raise DataError(
            f"node features have {x.n_dims} columns, expected {2 * n_nodes} "
            f"for {n_nodes} nodes"
        )
    return x.values.reshape(x.n_days, n_nodes, 2)


def gcn_train(
    node_features: FeatureMatrix,
    adjacency: NormalizedAdjacency,
    weekday_labels,
    cfg: TrainConfig,
    k_layers: int = 1,
    node_width: int = DEFAULT_GCN_NODE_WIDTH,
    head_hidden: int = DEFAULT_GCN_HEAD_HIDDEN,
) -> GcnModel:
    """Train the graph-convolutional weekday/weekend classifier.

    node_features rows are the node-major (out, in) pairs produced by the
    ingest stage; they are reshaped to per-day (nodes, 2) blocks.
    """
    if k_layers < 1:
        raise ConfigError(f"k_layers must be >= 1, got {k_layers}")
    blocks = _node_blocks(node_features, adjacency.n_nodes)
    labels = _check_labels(weekday_labels, node_features.n_days)
    rng = np.random.default_rng(cfg.seed)
    net = _gcn_network(
        adjacency.n_nodes, k_layers, node_width, head_hidden, adjacency.matrix, rng
    )
    loss_log, acc_log = train_network(
        net, SoftmaxCrossEntropy(), blocks, labels, cfg, track_accuracy=True
    )
    return GcnModel(net, adjacency, k_layers, node_width, head_hidden, cfg, loss_log, acc_log)


def gcn_latent(
    model: GcnModel,
    node_features: FeatureMatrix,
    adjacency: NormalizedAdjacency | None = None,
) -> FeatureMatrix:
    """Latent rows from the 20-wide head layer, graph layers included."""
    if adjacency is not None and not np.array_equal(
        adjacency.matrix, model.adjacency.matrix
    ):
        raise DataError("adjacency operator differs from the one the model was trained on")
    blocks = _node_blocks(node_features, model.n_nodes)
    return node_features.with_values(
        _assert_latent(model.network.forward(blocks, upto=model.latent_cut))
    )


# ---------------------------------------------------------------------------
# Persistence plumbing


def _save_network(
    path,
    kind: str,
    net: Network,
    meta: dict,
    loss_log: list[float],
    acc_log: list[float],
    extra_arrays: dict | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for i, name, arr in net.param_items():
        arrays[f"layer{i}.{name}"] = arr
    if extra_arrays:
        arrays.update(extra_arrays)
    if loss_log:
        arrays["loss_log"] = np.asarray(loss_log)
    if acc_log:
        arrays["accuracy_log"] = np.asarray(acc_log)
    persist.save_model(path, kind, meta, arrays)


def _load_network_parts(path, expected_kind: str):
    kind, meta, arrays = persist.load_model(path)
    if kind != expected_kind:
        raise DataError(f"expected a {expected_kind!r} model file, got {kind!r}")
    loss_log = list(arrays.pop("loss_log").ravel()) if "loss_log" in arrays else []
    acc_log = list(arrays.pop("accuracy_log").ravel()) if "accuracy_log" in arrays else []
    return meta, arrays, loss_log, acc_log


def _restore_params(net: Network, arrays: dict[str, np.ndarray]) -> None:
    for i, name, arr in net.param_items():
        key = f"layer{i}.{name}"
        if key not in arrays:
            raise DataError(f"model file missing parameter array {key!r}")
        saved = arrays[key]
        if name == "b":
            saved = saved.ravel()
        if saved.shape != arr.shape:
            raise DataError(
                f"parameter {key!r} shape {saved.shape} != expected {arr.shape}"
            )
        arr[...] = saved

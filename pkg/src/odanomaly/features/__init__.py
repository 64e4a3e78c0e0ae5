"""Latent feature learning: PCA, autoencoder, discriminative MLP/GCN.

Every method maps the day-indexed input matrix to a 20-wide latent
matrix over the same dates.
"""

from __future__ import annotations

from ..core import FeatureMatrix
from ..ingest import ODTensor
from .engine import (
    LATENT_DIM,
    Adam,
    Affine,
    BinaryCrossEntropy,
    Flatten,
    GraphConv,
    Network,
    ReLU,
    Sigmoid,
    SoftmaxCrossEntropy,
    TrainConfig,
    grad_check,
    train_network,
)
from .models import (
    AeModel,
    GcnModel,
    MlpModel,
    ae_encode,
    ae_train,
    gcn_latent,
    gcn_train,
    mlp_latent,
    mlp_train,
)
from .pca import PcaModel, pca_fit, pca_inverse, pca_transform

__all__ = [
    "LATENT_DIM",
    "Adam",
    "Affine",
    "AeModel",
    "BinaryCrossEntropy",
    "Flatten",
    "GcnModel",
    "GraphConv",
    "MlpModel",
    "Network",
    "PcaModel",
    "ReLU",
    "Sigmoid",
    "SoftmaxCrossEntropy",
    "TrainConfig",
    "ae_encode",
    "ae_train",
    "flatten_edges",
    "gcn_latent",
    "gcn_train",
    "grad_check",
    "mlp_latent",
    "mlp_train",
    "pca_fit",
    "pca_inverse",
    "pca_transform",
    "train_network",
    "unflatten_edges",
]


def flatten_edges(tensor: ODTensor) -> FeatureMatrix:
    """Row d is the row-major flattening of day d's C x C matrix (F = C^2)."""
    return FeatureMatrix(
        list(tensor.dates), tensor.flows.reshape(tensor.n_days, -1)
    )


def unflatten_edges(fm: FeatureMatrix, node_ids: list[str]) -> ODTensor:
    """Inverse of flatten_edges for a known node list."""
    n = len(node_ids)
    return ODTensor(list(fm.dates), list(node_ids), fm.values.reshape(fm.n_days, n, n))

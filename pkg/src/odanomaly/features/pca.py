"""Principal component analysis baseline (top-k SVD of centered data)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import FeatureMatrix
from ..errors import ConfigError, DataError
from .engine import LATENT_DIM


@dataclass
class PcaModel:
    """Mean vector, orthonormal component rows, and their variances."""

    mean: np.ndarray = field(repr=False)
    components: np.ndarray = field(repr=False)  # (k, F), orthonormal rows
    explained_variance: np.ndarray = field(repr=False)  # (k,), nonincreasing

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.components.shape[1]

    def save(self, path) -> None:
        from .. import persist

        persist.save_model(
            path,
            "pca",
            {"n_components": self.n_components, "n_inputs": self.n_inputs},
            {
                "mean": self.mean,
                "components": self.components,
                "explained_variance": self.explained_variance,
            },
        )

    @classmethod
    def load(cls, path) -> "PcaModel":
        from .. import persist

        kind, _, arrays = persist.load_model(path)
        if kind != "pca":
            raise DataError(f"expected a 'pca' model file, got {kind!r}")
        return cls(
            arrays["mean"].ravel(),
            arrays["components"],
            arrays["explained_variance"].ravel(),
        )


def pca_fit(x: FeatureMatrix, k: int = LATENT_DIM) -> PcaModel:
    """Fit the top-k principal components of the mean-centered rows.

    explained_variance holds the corresponding eigenvalues of the sample
    covariance (ddof=1). Component signs are fixed so each row's largest
    absolute entry is positive, making the fit deterministic.
    """
    data = x.values
    n_rows, n_cols = data.shape
    if n_rows < 2:
        raise DataError(f"need at least 2 rows to fit PCA, got {n_rows}")
    if k < 1 or k > min(n_rows - 1, n_cols):
        raise ConfigError(
            f"k={k} out of range; must be in [1, min(rows-1={n_rows - 1}, cols={n_cols})]"
        )
    mean = data.mean(axis=0)
    centered = data - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k]
    signs = np.sign(components[np.arange(k), np.abs(components).argmax(axis=1)])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]
    explained = (singular[:k] ** 2) / (n_rows - 1)
    return PcaModel(mean, components, explained)


def pca_transform(model: PcaModel, x: FeatureMatrix) -> FeatureMatrix:
    """Project rows onto the components: Z = (X - mean) @ components.T."""
    if x.n_dims != model.n_inputs:
        raise DataError(f"model expects {model.n_inputs} columns, got {x.n_dims}")
    return x.with_values((x.values - model.mean) @ model.components.T)


def pca_inverse(model: PcaModel, z: FeatureMatrix) -> FeatureMatrix:
    """Map scores back to the input space (exact when k spans the data)."""
    if z.n_dims != model.n_components:
        raise DataError(f"model has {model.n_components} components, got {z.n_dims}")
    return z.with_values(z.values @ model.components + model.mean)

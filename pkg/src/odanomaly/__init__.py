"""Anomaly detection for temporal origin-destination mobility networks.

Three stages: topological aggregation by modularity communities, 20-wide
latent feature learning (PCA, autoencoder, discriminative MLP/GCN), and
GMM density estimation with chi-square p-value flagging, evaluated by
best F1 against a labeled event calendar.
"""

from .core import FeatureMatrix
from .errors import ConfigError, DataError, NumericError, OdanomalyError
from .ingest import DayCalendar, ODTensor, SyntheticConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DayCalendar",
    "FeatureMatrix",
    "NumericError",
    "ODTensor",
    "OdanomalyError",
    "SyntheticConfig",
    "__version__",
]

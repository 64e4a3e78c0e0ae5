import datetime as dt

import numpy as np
import pytest

from odanomaly.core import FeatureMatrix
from odanomaly.ingest import ODTensor

START = dt.date(2017, 1, 2)  # a Monday


def days(n, start=START):
    return [start + dt.timedelta(days=i) for i in range(n)]


@pytest.fixture
def three_node_tensor():
    """Two days, three nodes, hand-auditable flows."""
    flows = np.array(
        [
            [[0.0, 5.0, 0.0], [0.0, 0.0, 4.0], [0.0, 0.0, 0.0]],
            [[1.0, 0.0, 0.0], [0.0, 0.0, 2.0], [7.0, 0.0, 0.0]],
        ]
    )
    return ODTensor(days(2), ["A", "B", "C"], flows)


@pytest.fixture
def random_tensor():
    rng = np.random.default_rng(1234)
    flows = rng.uniform(0.1, 3.0, size=(5, 4, 4))
    return ODTensor(days(5), ["A", "B", "C", "D"], flows)


def feature_matrix(values, start=START):
    values = np.asarray(values, dtype=float)
    return FeatureMatrix(days(values.shape[0], start), values)

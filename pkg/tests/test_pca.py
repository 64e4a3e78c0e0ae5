import numpy as np
import pytest

from odanomaly.errors import ConfigError, DataError
from odanomaly.features.pca import PcaModel, pca_fit, pca_inverse, pca_transform

from conftest import feature_matrix


class TestPcaFit:
    def test_rank_one_diagonal_direction(self):
        rng = np.random.default_rng(0)
        scal = rng.normal(0, 2, 40)
        x = feature_matrix(np.outer(scal, [1.0, 1.0]))
        model = pca_fit(x, k=1)
        direction = np.abs(model.components[0])
        assert np.allclose(direction, 1 / np.sqrt(2), atol=1e-12)

    def test_rank_one_second_variance_zero(self):
        rng = np.random.default_rng(1)
        x = feature_matrix(np.outer(rng.normal(0, 2, 40), [1.0, 1.0, 0.0]))
        model = pca_fit(x, k=2)
        assert model.explained_variance[1] == pytest.approx(0.0, abs=1e-20)

    def test_axis_aligned_variances(self):
        rng = np.random.default_rng(2)
        n = 400
        a = rng.normal(0, 2.0, n)
        b = rng.normal(0, 1.0, n)
        a -= a.mean()
        b -= b.mean()
        b -= (b @ a) / (a @ a) * a  # exactly decorrelate the columns
        x = np.column_stack([a / a.std(ddof=1) * 2.0, b / b.std(ddof=1)])
        model = pca_fit(feature_matrix(x), k=2)
        assert np.allclose(model.explained_variance, [4.0, 1.0], atol=1e-8)
        for row in model.components:
            assert np.allclose(np.abs(row), [1, 0], atol=1e-6) or np.allclose(
                np.abs(row), [0, 1], atol=1e-6
            )

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(3)
        x = feature_matrix(rng.uniform(-1, 1, (50, 6)))
        model = pca_fit(x, k=6)
        z = pca_transform(model, x)
        back = pca_inverse(model, z)
        assert np.allclose(back.values, x.values, atol=1e-8)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(4)
        x = feature_matrix(rng.uniform(0, 1, (30, 10)))
        model = pca_fit(x, k=5)
        gram = model.components @ model.components.T
        assert np.allclose(gram, np.eye(5), atol=1e-10)

    def test_explained_variance_nonincreasing_and_matches_projection(self):
        rng = np.random.default_rng(5)
        x = feature_matrix(rng.normal(0, 1, (60, 8)) * np.arange(1, 9))
        model = pca_fit(x, k=6)
        assert np.all(np.diff(model.explained_variance) <= 1e-12)
        z = pca_transform(model, x)
        assert np.allclose(
            z.values.var(axis=0, ddof=1), model.explained_variance, atol=1e-8
        )

    def test_k_too_large(self):
        x = feature_matrix(np.random.default_rng(0).uniform(size=(5, 3)))
        with pytest.raises(ConfigError):
            pca_fit(x, k=5)  # k > min(D-1, F)
        with pytest.raises(DataError):
            pca_fit(feature_matrix(np.ones((1, 3))), k=1)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        x = feature_matrix(rng.uniform(size=(20, 7)))
        m1, m2 = pca_fit(x, 3), pca_fit(x, 3)
        assert np.array_equal(m1.components, m2.components)


class TestPcaTransform:
    def test_mean_maps_to_zero(self):
        rng = np.random.default_rng(7)
        x = feature_matrix(rng.uniform(size=(20, 4)))
        model = pca_fit(x, k=2)
        at_mean = feature_matrix(np.tile(model.mean, (3, 1)))
        z = pca_transform(model, at_mean)
        assert np.allclose(z.values, 0.0, atol=1e-12)

    def test_offset_along_first_component(self):
        rng = np.random.default_rng(8)
        x = feature_matrix(rng.uniform(size=(20, 4)))
        model = pca_fit(x, k=3)
        point = feature_matrix((model.mean + 3.0 * model.components[0])[None, :])
        z = pca_transform(model, point)
        assert z.values[0, 0] == pytest.approx(3.0, abs=1e-10)
        assert np.allclose(z.values[0, 1:], 0.0, atol=1e-10)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(9)
        x = feature_matrix(rng.uniform(size=(12, 5)))
        model = pca_fit(x, k=3)
        z = pca_transform(model, x)
        oracle = np.zeros((12, 3))
        for i in range(12):
            for j in range(3):
                for f in range(5):
                    oracle[i, j] += (x.values[i, f] - model.mean[f]) * model.components[j, f]
        assert np.allclose(z.values, oracle, atol=1e-10)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(10)
        model = pca_fit(feature_matrix(rng.uniform(size=(10, 4))), k=2)
        with pytest.raises(DataError):
            pca_transform(model, feature_matrix(rng.uniform(size=(3, 5))))

    def test_dates_preserved(self):
        rng = np.random.default_rng(11)
        x = feature_matrix(rng.uniform(size=(10, 4)))
        z = pca_transform(pca_fit(x, k=2), x)
        assert z.dates == x.dates


class TestPcaPersistence:
    def test_round_trip_bit_faithful(self, tmp_path):
        rng = np.random.default_rng(12)
        model = pca_fit(feature_matrix(rng.uniform(size=(15, 6))), k=4)
        path = tmp_path / "pca.txt"
        model.save(path)
        back = PcaModel.load(path)
        assert np.array_equal(back.mean, model.mean)
        assert np.array_equal(back.components, model.components)
        assert np.array_equal(back.explained_variance, model.explained_variance)

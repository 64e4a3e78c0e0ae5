import datetime as dt
import io
import math
import warnings

import numpy as np
import pytest

from odanomaly.core import FeatureMatrix
from odanomaly.density import (
    AnomalyScore,
    GmmModel,
    chi_square_sf,
    flag_anomalies,
    gmm_fit,
    gmm_fit_bic,
    read_scores_csv,
    responsibilities,
    score_days,
    write_scores_csv,
)
from odanomaly.errors import ConfigError, DataError

from conftest import feature_matrix


def chi2_sf_simpson(x, dof, n_intervals=1 << 17, upper=40.0):
    """Simpson-rule quadrature of the gamma integrand, substituted t = u^2.

    Q(dof/2, x/2) = 2/Gamma(s) * integral_{sqrt(x/2)}^{inf} u^(2s-1) e^(-u^2) du,
    which is smooth at the origin for every dof >= 1.
    """
    s = dof / 2.0
    a = math.sqrt(x / 2.0)
    if a >= upper:
        return 0.0
    u = np.linspace(a, upper, n_intervals + 1)
    f = u ** (2.0 * s - 1.0) * np.exp(-(u**2))
    h = (upper - a) / n_intervals
    integral = (h / 3.0) * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum())
    return 2.0 * integral / math.gamma(s)


class TestChiSquareSf:
    def test_zero_is_one(self):
        assert chi_square_sf(0.0, 20) == 1.0

    def test_dof2_closed_form(self):
        # chi-square with 2 dof is Exp(1/2): sf(x) = e^(-x/2)
        x = 2.0 * math.log(2.0)
        assert chi_square_sf(x, 2) == pytest.approx(0.5, abs=1e-14)
        for xv in (0.5, 1.0, 5.0, 20.0):
            assert chi_square_sf(xv, 2) == pytest.approx(math.exp(-xv / 2), rel=1e-13)

    def test_dof1_two_sigma(self):
        assert chi_square_sf(4.0, 1) == pytest.approx(0.0455, abs=1e-4)

    def test_dof20_table_value(self):
        assert chi_square_sf(31.410, 20) == pytest.approx(0.050, abs=2.5e-4)

    @pytest.mark.parametrize("dof", [1, 2, 5, 20])
    def test_matches_simpson_oracle(self, dof):
        for x in np.linspace(0.0, 60.0, 41):
            assert chi_square_sf(float(x), dof) == pytest.approx(
                chi2_sf_simpson(float(x), dof), abs=1e-10
            )

    def test_dof20_x20_against_oracle(self):
        assert chi_square_sf(20.0, 20) == pytest.approx(
            chi2_sf_simpson(20.0, 20), abs=1e-10
        )

    def test_strictly_decreasing(self):
        xs = np.linspace(0.0, 50.0, 200)
        ps = [chi_square_sf(float(x), 20) for x in xs]
        assert all(b < a for a, b in zip(ps, ps[1:]))

    def test_negative_x_rejected(self):
        with pytest.raises(ConfigError):
            chi_square_sf(-1.0, 3)
        with pytest.raises(ConfigError):
            chi_square_sf(1.0, 0)


class TestGmmFit:
    def test_k1_closed_form(self):
        rng = np.random.default_rng(5)
        x = rng.normal(2.0, 1.5, (60, 3))
        m = gmm_fit(feature_matrix(x), 1, seed=0)
        assert np.allclose(m.means[0], x.mean(axis=0), atol=1e-8)
        expected_cov = np.cov(x, rowvar=False, bias=True) + 1e-6 * np.eye(3)
        assert np.allclose(m.covariances[0], expected_cov, atol=1e-8)
        assert m.weights[0] == pytest.approx(1.0, abs=1e-12)

    def test_two_cluster_recovery(self):
        rng = np.random.default_rng(6)
        sigma = 0.5
        mu1, mu2 = np.zeros(2), np.array([5.0, 0.0])  # separation 10 sigma
        x = np.vstack(
            [rng.normal(mu1, sigma, (200, 2)), rng.normal(mu2, sigma, (200, 2))]
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = gmm_fit(feature_matrix(x), 2, seed=1)
        order = np.argsort(m.means[:, 0])
        assert np.linalg.norm(m.means[order[0]] - mu1) < 0.1
        assert np.linalg.norm(m.means[order[1]] - mu2) < 0.1
        assert np.allclose(m.weights, 0.5, atol=0.05)

    def test_log_likelihood_nondecreasing(self):
        rng = np.random.default_rng(7)
        for seed in range(4):
            x = np.vstack(
                [
                    rng.normal(0, 1, (40, 3)),
                    rng.normal(4, 0.5, (40, 3)),
                    rng.normal(-3, 2, (40, 3)),
                ]
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                m = gmm_fit(feature_matrix(x), 3, seed=seed)
            diffs = np.diff(m.log_likelihoods)
            assert np.all(diffs >= -1e-9)

    def test_responsibilities_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        x = feature_matrix(rng.normal(0, 1, (50, 4)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = gmm_fit(x, 3, seed=2)
        r = responsibilities(m, x)
        assert np.allclose(r.sum(axis=1), 1.0, atol=1e-12)

    def test_weights_simplex(self):
        rng = np.random.default_rng(9)
        x = feature_matrix(rng.normal(0, 1, (80, 3)))
        m = gmm_fit(x, 2, seed=3)
        assert m.weights.sum() == pytest.approx(1.0, abs=1e-12)
        for c in range(2):
            assert np.allclose(m.covariances[c], m.covariances[c].T, atol=1e-10)

    def test_k_exceeds_rows(self):
        x = feature_matrix(np.random.default_rng(0).normal(size=(5, 2)))
        with pytest.raises(ConfigError):
            gmm_fit(x, 6, seed=0)

    def test_non_finite_rejected(self):
        vals = np.ones((10, 2))
        fm = feature_matrix(vals)
        fm.values[0, 0] = np.inf  # bypass constructor validation
        with pytest.raises(DataError):
            gmm_fit(fm, 1, seed=0)

    def test_small_sample_warns(self):
        x = feature_matrix(np.random.default_rng(1).normal(size=(10, 6)))
        with pytest.warns(UserWarning, match="unstable"):
            gmm_fit(x, 2, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        x = feature_matrix(rng.normal(0, 1, (60, 3)))
        m1 = gmm_fit(x, 2, seed=4)
        m2 = gmm_fit(x, 2, seed=4)
        assert np.array_equal(m1.means, m2.means)
        assert np.array_equal(m1.covariances, m2.covariances)

    def test_bic_prefers_true_component_count(self):
        rng = np.random.default_rng(11)
        x = np.vstack([rng.normal(0, 0.4, (150, 2)), rng.normal(5, 0.4, (150, 2))])
        model, bics = gmm_fit_bic(feature_matrix(x), seed=0, k_values=(1, 2, 3))
        assert model.n_components == 2
        assert bics[2] < bics[1]


class TestScoreDays:
    def test_at_mean_p_is_one(self):
        rng = np.random.default_rng(12)
        x = feature_matrix(rng.normal(0, 1, (50, 3)))
        m = gmm_fit(x, 1, seed=0)
        z = FeatureMatrix([dt.date(2020, 1, 1)], m.means[[0]])
        s = score_days(m, z)[0]
        assert s.mahalanobis_sq == 0.0
        assert s.p_value == 1.0
        assert s.responsible_component == 0

    def test_one_dim_two_sigma(self):
        # hand-built single 1-D component: mu=0, sigma^2=1
        m = GmmModel(
            np.array([1.0]), np.array([[0.0]]), np.array([[[1.0]]]), [0.0], True, 0, 0.0
        )
        z = FeatureMatrix([dt.date(2020, 1, 1)], np.array([[2.0]]))
        s = score_days(m, z)[0]
        assert s.mahalanobis_sq == pytest.approx(4.0, abs=1e-12)
        assert s.p_value == pytest.approx(0.0455, abs=1e-4)

    def test_dof20_reference_point(self):
        m = GmmModel(
            np.array([1.0]),
            np.zeros((1, 20)),
            np.eye(20)[None, :, :],
            [0.0],
            True,
            0,
            0.0,
        )
        vec = np.full(20, math.sqrt(31.410 / 20.0))
        z = FeatureMatrix([dt.date(2020, 1, 1)], vec[None, :])
        s = score_days(m, z)[0]
        assert s.mahalanobis_sq == pytest.approx(31.410, abs=1e-9)
        assert s.p_value == pytest.approx(0.050, abs=2.5e-4)
        assert s.p_value == pytest.approx(chi2_sf_simpson(31.410, 20), abs=1e-6)

    def test_monotone_in_mahalanobis(self):
        rng = np.random.default_rng(13)
        x = feature_matrix(rng.normal(0, 1, (100, 2)))
        m = gmm_fit(x, 1, seed=0)
        scores = score_days(m, x)
        by_m2 = sorted(scores, key=lambda s: s.mahalanobis_sq)
        for a, b in zip(by_m2, by_m2[1:]):
            if b.mahalanobis_sq > a.mahalanobis_sq:
                assert b.p_value < a.p_value

    def test_calibration_k1(self):
        rng = np.random.default_rng(77)
        d = 2000
        x = feature_matrix(rng.standard_normal((d, 20)))
        m = gmm_fit(x, 1, seed=0)
        p = np.array([s.p_value for s in score_days(m, x)])
        for alpha in (0.05, 0.1):
            band = 3.0 * math.sqrt(alpha * (1 - alpha) / d)
            assert abs((p < alpha).mean() - alpha) <= band

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(14)
        x = feature_matrix(rng.normal(0, 1, (30, 3)))
        m = gmm_fit(x, 1, seed=0)
        with pytest.raises(DataError):
            score_days(m, feature_matrix(rng.normal(0, 1, (5, 4))))


class TestFlagAnomalies:
    def scores(self, ps):
        return [
            AnomalyScore(dt.date(2020, 1, 1) + dt.timedelta(days=i), p, 0, 1.0)
            for i, p in enumerate(ps)
        ]

    def test_threshold_below_min(self):
        assert flag_anomalies(self.scores([0.3, 0.5]), 0.1) == set()

    def test_threshold_one_flags_all(self):
        s = self.scores([0.3, 0.5, 0.9])
        assert flag_anomalies(s, 1.0) == {x.date for x in s}

    def test_planted_low_p_days(self):
        ps = [0.5] * 10
        ps[2] = ps[5] = ps[7] = 0.001
        s = self.scores(ps)
        flagged = flag_anomalies(s, 0.01)
        assert flagged == {s[2].date, s[5].date, s[7].date}

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            flag_anomalies(self.scores([0.5]), 0.0)
        with pytest.raises(ConfigError):
            flag_anomalies(self.scores([0.5]), 1.5)


class TestGmmPersistence:
    def test_round_trip_bit_faithful(self, tmp_path):
        rng = np.random.default_rng(15)
        x = feature_matrix(rng.normal(0, 1, (60, 3)))
        m = gmm_fit(x, 2, seed=5)
        path = tmp_path / "gmm.txt"
        m.save(path)
        back = GmmModel.load(path)
        assert np.array_equal(back.weights, m.weights)
        assert np.array_equal(back.means, m.means)
        assert np.array_equal(back.covariances, m.covariances)
        s1 = score_days(m, x)
        s2 = score_days(back, x)
        assert [(s.date, s.p_value) for s in s1] == [(s.date, s.p_value) for s in s2]

    def test_scores_csv_round_trip(self):
        scores = [
            AnomalyScore(dt.date(2020, 1, 1), 0.123456789012345678, 1, 7.25),
            AnomalyScore(dt.date(2020, 1, 2), 1.0, 0, 0.0),
        ]
        buf = io.StringIO()
        write_scores_csv(scores, buf)
        back = read_scores_csv(buf.getvalue())
        assert back == scores

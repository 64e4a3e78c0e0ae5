"""Gaussian-mixture density estimation and p-value anomaly flagging.

A GMM is fit to the latent space by EM (k-means++ start, log-sum-exp
E-step, diagonal regularization in the M-step). Each day is then assigned
to its argmax-responsibility component and scored with the upper-tail
chi-square probability of its squared Mahalanobis distance, degrees of
freedom equal to the latent width.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix, fmt_float, format_date, parse_date
from .errors import ConfigError, DataError, NumericError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmModel:
    """K weighted Gaussian components with full covariances."""

    weights: np.ndarray = field(repr=False)  # (K,), sums to 1
    means: np.ndarray = field(repr=False)  # (K, d)
    covariances: np.ndarray = field(repr=False)  # (K, d, d), SPD
    log_likelihoods: list[float] = field(default_factory=list, repr=False)
    converged: bool = False
    seed: int = 0
    reg: float = 1e-6

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_dims(self) -> int:
        return self.means.shape[1]

    def n_parameters(self) -> int:
        k, d = self.n_components, self.n_dims
        return (k - 1) + k * d + k * d * (d + 1) // 2

    def save(self, path) -> None:
        from . import persist

        k, d = self.n_components, self.n_dims
        persist.save_model(
            path,
            "gmm",
            {
                "n_components": k,
                "n_dims": d,
                "seed": self.seed,
                "reg": self.reg,
                "converged": self.converged,
            },
            {
                "weights": self.weights,
                "means": self.means,
                "covariances": self.covariances.reshape(k, d * d),
                "log_likelihoods": np.asarray(self.log_likelihoods or [0.0]),
            },
        )

    @classmethod
    def load(cls, path) -> "GmmModel":
        from . import persist

        kind, meta, arrays = persist.load_model(path)
        if kind != "gmm":
            raise DataError(f"expected a 'gmm' model file, got {kind!r}")
        k, d = meta["n_components"], meta["n_dims"]
        return cls(
            arrays["weights"].ravel(),
            arrays["means"],
            arrays["covariances"].reshape(k, d, d),
            list(arrays["log_likelihoods"].ravel()),
            bool(meta["converged"]),
            meta["seed"],
            meta["reg"],
        )


@dataclass(frozen=True)
class AnomalyScore:
    """Per-day outlyingness under the responsible mixture component."""

    date: dt.date
    p_value: float
    responsible_component: int
    mahalanobis_sq: float


# ---------------------------------------------------------------------------
# Chi-square survival function (regularized upper incomplete gamma)

_GAMMA_MAX_ITER = 500
_GAMMA_EPS = 1e-16


def _lower_gamma_series(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x) by series (x < s + 1)."""
    ap = s
    total = 1.0 / s
    delta = total
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))

def _upper_gamma_cf(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) by Lentz continued
    fraction (x >= s + 1)."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h


def regularized_upper_gamma(s: float, x: float) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s) for s > 0, x >= 0."""
    if s <= 0:
        raise ConfigError(f"shape parameter must be positive, got {s}")
    if x < 0:
        raise ConfigError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        return 1.0 - _lower_gamma_series(s, x)
    return _upper_gamma_cf(s, x)


def chi_square_sf(x: float, dof: int) -> float:
    """Upper-tail probability of the chi-square distribution.

    Equals Q(dof/2, x/2); absolute accuracy is far below 1e-10 over the
    ranges exercised here (dof up to tens, x up to hundreds).
    """
    if dof < 1:
        raise ConfigError(f"dof must be >= 1, got {dof}")
    if x < 0:
        raise ConfigError(f"x must be nonnegative, got {x}")
    return regularized_upper_gamma(dof / 2.0, x / 2.0)


# ---------------------------------------------------------------------------
# EM fitting


def _log_gaussians(x: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """Log-density of every row under every component, shape (D, K)."""
    d = x.shape[1]
    out = np.empty((x.shape[0], means.shape[0]))
    for k in range(means.shape[0]):
        try:
            chol = np.linalg.cholesky(covariances[k])
        except np.linalg.LinAlgError:
            raise NumericError(f"singular covariance in component {k}") from None
        diff = x - means[k]
        solved = np.linalg.solve(chol, diff.T)
        maha = np.einsum("ij,ij->j", solved, solved)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, k] = -0.5 * (d * _LOG_2PI + log_det + maha)
    return out


def _log_resp(x, weights, means, covariances):
    log_prob = _log_gaussians(x, means, covariances) + np.log(weights)[None, :]
    top = log_prob.max(axis=1, keepdims=True)
    log_norm = top + np.log(np.exp(log_prob - top).sum(axis=1, keepdims=True))
    return log_prob - log_norm, float(log_norm.sum())


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[int(rng.integers(x.shape[0]))]]
    for _ in range(1, k):
        dist_sq = np.min(
            [((x - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = dist_sq.sum()
        if total <= 0.0:
            idx = int(rng.integers(x.shape[0]))
        else:
            idx = int(rng.choice(x.shape[0], p=dist_sq / total))
        centers.append(x[idx])
    return np.array(centers)


def _initial_params(x: np.ndarray, k: int, reg: float, rng: np.random.Generator):
    centers = _kmeanspp_centers(x, k, rng)
    assign = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
    d = x.shape[1]
    weights = np.empty(k)
    means = np.empty((k, d))
    covariances = np.empty((k, d, d))
    global_cov = np.cov(x, rowvar=False, bias=True).reshape(d, d) + reg * np.eye(d)
    for c in range(k):
        members = x[assign == c]
        if members.shape[0] == 0:
            weights[c] = 1.0 / x.shape[0]
            means[c] = centers[c]
            covariances[c] = global_cov
        else:
            weights[c] = members.shape[0] / x.shape[0]
            means[c] = members.mean(axis=0)
            diff = members - means[c]
            covariances[c] = diff.T @ diff / members.shape[0] + reg * np.eye(d)
    weights /= weights.sum()
    return weights, means, covariances


def gmm_fit(
    z: FeatureMatrix,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    reg: float = 1e-6,
) -> GmmModel:
    """Fit a K-component full-covariance GMM by EM.

    Deterministic for a fixed seed. Covariances get reg added to the
    diagonal every M-step, which keeps EM from collapsing onto degenerate
    latent directions. The fit log records one log-likelihood per
    iteration; EM guarantees the sequence is nondecreasing (within 1e-9
    numerically).
    """
    x = z.values
    n, d = x.shape
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"K={k} exceeds the number of rows {n}")
    if not np.all(np.isfinite(x)):
        raise DataError("latent matrix contains non-finite values")
    if n <= k * (d + 1):
        warnings.warn(
            f"only {n} rows for K={k} components in {d} dims; "
            "estimates may be unstable",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    weights, means, covariances = _initial_params(x, k, reg, rng)

    eye = reg * np.eye(d)
    tiny = 10.0 * np.finfo(np.float64).eps
    lls: list[float] = []
    converged = False
    for _ in range(max_iter):
        log_resp, ll = _log_resp(x, weights, means, covariances)
        lls.append(ll)
        if len(lls) > 1 and ll - lls[-2] < tol:
            converged = True
            break
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0) + tiny
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for c in range(k):
            diff = x - means[c]
            covariances[c] = (resp[:, c] * diff.T) @ diff / nk[c] + eye
    return GmmModel(weights, means, covariances, lls, converged, seed, reg)


def gmm_bic(model: GmmModel, n_rows: int) -> float:
    """Bayesian information criterion (lower is better)."""
    return -2.0 * model.log_likelihoods[-1] + model.n_parameters() * math.log(n_rows)


def gmm_fit_bic(
    z: FeatureMatrix,
    seed: int = 0,
    k_values: tuple[int, ...] = (1, 2, 3, 4, 5),
    **kwargs,
) -> tuple[GmmModel, dict[int, float]]:
    """Fit for each candidate K and keep the lowest-BIC model."""
    bics: dict[int, float] = {}
    best: GmmModel | None = None
    for k in k_values:
        if k > z.n_days:
            continue
        model = gmm_fit(z, k, seed=seed, **kwargs)
        bics[k] = gmm_bic(model, z.n_days)
        if best is None or bics[k] < bics[best.n_components]:
            best = model
    if best is None:
        raise ConfigError("no feasible K in k_values")
    return best, bics


# ---------------------------------------------------------------------------
# Scoring and flagging


def responsibilities(model: GmmModel, z: FeatureMatrix) -> np.ndarray:
    """Posterior component probabilities per row, shape (D, K); rows sum to 1."""
    if z.n_dims != model.n_dims:
        raise DataError(f"model has {model.n_dims} dims, latent has {z.n_dims}")
    log_resp, _ = _log_resp(z.values, model.weights, model.means, model.covariances)
    return np.exp(log_resp)


def score_days(model: GmmModel, z: FeatureMatrix) -> list[AnomalyScore]:
    """Per-day p-values under the argmax-responsibility component.

    Ties in responsibility break toward the lower component index. The
    p-value is the chi-square upper tail of the squared Mahalanobis
    distance with dof equal to the latent width.
    """
    if z.n_dims != model.n_dims:
        raise DataError(f"model has {model.n_dims} dims, latent has {z.n_dims}")
    x = z.values
    log_resp, _ = _log_resp(x, model.weights, model.means, model.covariances)
    owners = log_resp.argmax(axis=1)
    scores: list[AnomalyScore] = []
    for k in range(model.n_components):
        rows = np.flatnonzero(owners == k)
        if rows.size == 0:
            continue
        try:
            chol = np.linalg.cholesky(model.covariances[k])
        except np.linalg.LinAlgError:
            raise NumericError(f"singular covariance in component {k}") from None
        diff = x[rows] - model.means[k]
        solved = np.linalg.solve(chol, diff.T)
        maha = np.einsum("ij,ij->j", solved, solved)
        for row, m2 in zip(rows, maha):
            scores.append(
                AnomalyScore(
                    z.dates[int(row)],
                    chi_square_sf(float(m2), model.n_dims),
                    int(k),
                    float(m2),
                )
            )
    scores.sort(key=lambda s: s.date)
    return scores


def flag_anomalies(scores: list[AnomalyScore], threshold: float) -> set[dt.date]:
    """Dates whose p-value falls strictly below the threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    return {s.date for s in scores if s.p_value < threshold}


# ---------------------------------------------------------------------------
# Score persistence


def write_scores_csv(scores: list[AnomalyScore], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date", "p_value", "component", "mahalanobis_sq"])
    for s in scores:
        writer.writerow(
            [
                format_date(s.date),
                fmt_float(s.p_value),
                s.responsible_component,
                fmt_float(s.mahalanobis_sq),
            ]
        )


def read_scores_csv(source) -> list[AnomalyScore]:
    import io

    if isinstance(source, (str, bytes)):
        source = io.StringIO(source if isinstance(source, str) else source.decode())
    rows = iter(csv.reader(source))
    header = next(rows, None)
    expected = ["date", "p_value", "component", "mahalanobis_sq"]
    if header is None or [c.strip() for c in header][:4] != expected:
        raise DataError(f"bad scores header, expected {expected}")
    scores = []
    for row in rows:
        if not row:
            continue
        scores.append(
            AnomalyScore(parse_date(row[0]), float(row[1]), int(row[2]), float(row[3]))
        )
    if not scores:
        raise DataError("no score rows in input")
    return scores

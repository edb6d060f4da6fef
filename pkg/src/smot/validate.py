"""Post-training distribution diagnostics: moments, projections, Q-Q pairs.

The headline metric projects the sample cloud onto random directions and
scores each projection against the implied univariate normal with a
variance-normalized mean squared quantile gap; a baseline distribution of
the same metric on fresh draws from the target calibrates what "good"
looks like.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .density import Gaussian, TargetSpec, target_quantile

__all__ = [
    "MetricsReport",
    "empirical_moments",
    "avg_wasserstein",
    "affine_projection_suite",
    "qq_pairs",
    "build_metrics_report",
]


@dataclass
class MetricsReport:
    """Moments, per-margin diagnostics and the projection metric values."""

    mean: np.ndarray
    cov: np.ndarray
    margins: list[dict] = field(default_factory=list)
    affine_empirical: np.ndarray | None = None
    affine_baseline: np.ndarray | None = None


def empirical_moments(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance (divisor n-1)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape[0] < 2:
        raise ValueError("moments need at least 2 samples")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (arr.shape[0] - 1)
    return mean, cov


def avg_wasserstein(sorted_x: np.ndarray, sorted_y: np.ndarray, sigma_bar: float) -> float:
    """(1/n) sum (x_i - y_i)^2 / sigma_bar^2 over two sorted arrays."""
    x = np.asarray(sorted_x, dtype=np.float64).reshape(-1)
    y = np.asarray(sorted_y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("arrays must have equal length")
    if np.any(np.diff(x) < 0) or np.any(np.diff(y) < 0):
        raise ValueError("inputs must be sorted ascending")
    if sigma_bar <= 0:
        raise ValueError("sigma_bar must be positive")
    return float(np.mean((x - y) ** 2) / (sigma_bar * sigma_bar))


def affine_projection_suite(samples: np.ndarray, target: Gaussian, k: int,
                            rng: np.random.Generator, chunk: int = 256
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Projection metric over k random directions, plus its baseline.

    Every direction has i.i.d. standard normal entries.  Each projection is
    sorted and scored against the quantiles of the induced univariate
    normal; the baseline scores n fresh normal draws the same way, giving
    the sampling-noise floor of the metric.
    """
    if not isinstance(target, Gaussian):
        raise ValueError("affine projections require a Gaussian target")
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    n, d = arr.shape
    if d != target.d:
        raise ValueError(f"samples have dim {d}, target has dim {target.d}")
    q = ndtri((np.arange(1, n + 1) - 0.5) / n).reshape(-1, 1)
    empirical = np.empty(k)
    baseline = np.empty(k)
    for start in range(0, k, chunk):
        dirs = rng.standard_normal((d, min(chunk, k - start)))
        mu_aff = target.mean @ dirs
        var_aff = np.einsum("dk,de,ek->k", dirs, target.cov, dirs)
        theo = mu_aff + np.sqrt(var_aff) * q
        proj = np.sort(arr @ dirs, axis=0)
        empirical[start : start + dirs.shape[1]] = np.mean(
            (proj - theo) ** 2, axis=0
        ) / var_aff
        draws = np.sort(mu_aff + np.sqrt(var_aff) * rng.standard_normal(proj.shape), axis=0)
        baseline[start : start + dirs.shape[1]] = np.mean(
            (draws - theo) ** 2, axis=0
        ) / var_aff
    return empirical, baseline


def qq_pairs(samples: np.ndarray, target: TargetSpec) -> np.ndarray:
    """(sorted sample, target quantile at (i-1/2)/n) pairs, shape (n, 2)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = x.size
    if n < 1:
        raise ValueError("qq_pairs needs at least one sample")
    q = np.asarray(target_quantile(target, (np.arange(1, n + 1) - 0.5) / n))
    return np.stack([x, q], axis=1)


def build_metrics_report(samples: np.ndarray, target: TargetSpec, k: int,
                         rng: np.random.Generator) -> MetricsReport:
    """Assemble the full diagnostics for one terminal sample set."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    mean, cov = empirical_moments(arr)
    report = MetricsReport(mean=mean, cov=cov)
    for j in range(arr.shape[1]):
        margin = arr[:, j]
        if isinstance(target, Gaussian):
            margin_target: TargetSpec = Gaussian(
                np.array([target.mean[j]]), np.array([[target.cov[j, j]]])
            )
        else:
            margin_target = target
        report.margins.append(
            {
                "mean": float(margin.mean()),
                "std": float(margin.std(ddof=1)),
                "qq": qq_pairs(margin, margin_target),
            }
        )
    if isinstance(target, Gaussian):
        emp, base = affine_projection_suite(arr, target, k, rng)
        report.affine_empirical = emp
        report.affine_baseline = base
    return report

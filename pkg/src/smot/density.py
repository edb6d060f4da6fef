"""Gaussian kernel density estimation, analytic targets, terminal penalties.

The empirical terminal density is smoothed with a diagonal-bandwidth
Gaussian kernel on a rectangular grid; the target density is re-smoothed
with the same bandwidth so the kernel bias cancels from the penalty.  All
numerical flooring (KL) happens here, not in the autodiff engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "Gaussian",
    "Mixture1d",
    "TargetSpec",
    "Grid",
    "Kde",
    "default_grid",
    "bandwidth_scott",
    "kde_on_grid",
    "target_on_grid",
    "penalty_l2",
    "penalty_kl",
    "penalty_w2",
    "target_pdf",
    "target_sample",
    "target_quantile",
    "target_mean",
    "target_cov",
    "w2_order_stat",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal target N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean dim {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("cov must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as err:
            raise ValueError("cov must be positive definite") from err
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.size

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)


@dataclass(frozen=True)
class Mixture1d:
    """Finite mixture of one-dimensional Gaussians."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if not (w.shape == m.shape == s.shape) or w.ndim != 1:
            raise ValueError("weights, means, stds must be 1-d arrays of equal length")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(s <= 0.0):
            raise ValueError("mixture stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def d(self) -> int:
        return 1


TargetSpec = Gaussian | Mixture1d


def target_mean(target: TargetSpec) -> np.ndarray:
    if isinstance(target, Gaussian):
        return target.mean.copy()
    return np.array([float(np.sum(target.weights * target.means))])


def target_cov(target: TargetSpec) -> np.ndarray:
    if isinstance(target, Gaussian):
        return target.cov.copy()
    mu = float(np.sum(target.weights * target.means))
    second = float(np.sum(target.weights * (target.stds**2 + target.means**2)))
    return np.array([[second - mu * mu]])


def target_pdf(target: TargetSpec, x) -> np.ndarray:
    """Density values at points x of shape (n, d) (or (n,) when d = 1)."""
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, target.d if isinstance(target, Gaussian) else 1)
    if isinstance(target, Gaussian):
        if pts.shape[1] != target.d:
            raise ValueError(f"points have dim {pts.shape[1]}, target has dim {target.d}")
        diff = pts - target.mean
        sol = np.linalg.solve(target.cov, diff.T).T
        quad = np.einsum("ni,ni->n", diff, sol)
        _, logdet = np.linalg.slogdet(target.cov)
        return np.exp(-0.5 * (quad + target.d * _LOG_2PI + logdet))
    z = (pts.reshape(-1, 1) - target.means) / target.stds
    comp = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * target.stds)
    return comp @ target.weights


def target_sample(target: TargetSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """n draws with shape (n, d), deterministic given the generator state."""
    if isinstance(target, Gaussian):
        z = rng.standard_normal((n, target.d))
        return target.mean + z @ target._chol.T
    idx = rng.choice(target.weights.size, size=n, p=target.weights)
    z = rng.standard_normal(n)
    return (target.means[idx] + target.stds[idx] * z).reshape(n, 1)


def _mixture_cdf(target: Mixture1d, x: np.ndarray) -> np.ndarray:
    z = (x.reshape(-1, 1) - target.means) / target.stds
    # Phi via the complementary error function keeps the tails accurate
    from scipy.special import ndtr

    return np.asarray(ndtr(z) @ target.weights)


def target_quantile(target: TargetSpec, u) -> np.ndarray:
    """Inverse CDF for one-dimensional targets; mixtures use bisection."""
    uu = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if np.any(uu <= 0.0) or np.any(uu >= 1.0):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    if isinstance(target, Gaussian):
        if target.d != 1:
            raise ValueError("quantiles are defined for one-dimensional targets only")
        out = target.mean[0] + np.sqrt(target.cov[0, 0]) * ndtri(uu)
    else:
        lo = np.full_like(uu, float(np.min(target.means - 14.0 * target.stds)))
        hi = np.full_like(uu, float(np.max(target.means + 14.0 * target.stds)))
        # bisection on the mixture CDF, stopped at interval width 1e-10
        while np.max(hi - lo) > 1e-10:
            mid = 0.5 * (lo + hi)
            below = _mixture_cdf(target, mid) < uu
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
    return out if np.ndim(u) else np.float64(out[0])


@dataclass(frozen=True)
class Grid:
    """Rectangular evaluation grid, I points per dimension, row-major order."""

    lows: np.ndarray
    highs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lows, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.highs, dtype=np.float64))
        ct = np.atleast_1d(np.asarray(self.counts, dtype=np.int64))
        if not (lo.shape == hi.shape == ct.shape):
            raise ValueError("lows, highs, counts must have equal length")
        if np.any(lo >= hi):
            raise ValueError("grid requires lo < hi in every dimension")
        if np.any(ct < 2):
            raise ValueError("grid requires at least 2 points per dimension")
        object.__setattr__(self, "lows", lo)
        object.__setattr__(self, "highs", hi)
        object.__setattr__(self, "counts", ct)

    @property
    def d(self) -> int:
        return self.lows.size

    @property
    def deltas(self) -> np.ndarray:
        return (self.highs - self.lows) / (self.counts - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.deltas))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def points(self) -> np.ndarray:
        axes = [
            np.linspace(self.lows[i], self.highs[i], self.counts[i])
            for i in range(self.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


def default_grid(target: TargetSpec, points_per_dim: int = 100) -> Grid:
    """Bounds at target mean +/- 4 sqrt(max diagonal variance) per dimension."""
    mu = target_mean(target)
    half = 4.0 * np.sqrt(np.max(np.diag(target_cov(target))))
    counts = np.full(mu.size, int(points_per_dim))
    return Grid(mu - half, mu + half, counts)


def bandwidth_scott(samples: np.ndarray) -> np.ndarray:
    """Diagonal bandwidth H_ii = (sigma_i * M^(-1/(d+4)))^2 (Scott's rule)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    m, d = arr.shape
    if m < 2:
        raise ValueError("bandwidth selection needs at least 2 samples")
    sigma = arr.std(axis=0, ddof=1)
    if np.any(sigma <= 0.0):
        raise ValueError("zero-variance dimension: bandwidth undefined")
    factor = m ** (-1.0 / (d + 4.0))
    return (sigma * factor) ** 2


@dataclass(frozen=True)
class Kde:
    """Gaussian KDE with diagonal bandwidth, bound to a sample set."""

    samples: np.ndarray
    h2: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        h2 = np.atleast_1d(np.asarray(self.h2, dtype=np.float64))
        if np.any(h2 <= 0.0):
            raise ValueError("bandwidth diagonal must be positive")
        if h2.size != s.shape[1]:
            raise ValueError("bandwidth dimension does not match samples")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "h2", h2)

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.h2)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return _kde_numpy(self.samples, np.asarray(points, dtype=np.float64), self.h2)


def _kernel_norm(h2: np.ndarray) -> float:
    d = h2.size
    return float((2.0 * np.pi) ** (-d / 2.0) / np.sqrt(np.prod(h2)))


def _kde_numpy(samples: np.ndarray, points: np.ndarray, h2: np.ndarray,
               chunk: int = 2048) -> np.ndarray:
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    norm = _kernel_norm(h2)
    out = np.zeros(points.shape[0])
    inv = 1.0 / h2
    for start in range(0, samples.shape[0], chunk):
        block = samples[start : start + chunk]
        diff = points[None, :, :] - block[:, None, :]
        expo = -0.5 * np.einsum("spd,d->sp", diff * diff, inv)
        out += np.exp(expo).sum(axis=0)
    return out * (norm / samples.shape[0])


def kde_on_grid(samples: Tensor, grid: Grid, h2: np.ndarray) -> Tensor:
    """Differentiable KDE of the sample tensor on the grid, shape (1, G).

    Grid penalties are restricted to d <= 2: the point count grows
    exponentially with dimension.
    """
    if grid.d > 2:
        raise ValueError("grid KDE supports d <= 2 only")
    if samples.shape[1] != grid.d:
        raise ValueError(f"samples have dim {samples.shape[1]}, grid has dim {grid.d}")
    h2 = np.atleast_1d(np.asarray(h2, dtype=np.float64))
    m = samples.shape[0]
    pts = grid.points
    # exponent(s, g) = -(1/2)|x_s - p_g|^2_H expanded so the only
    # sample-by-grid products are one matmul and one outer product
    cross_k = (pts / h2).T  # (d, G)
    cross = ad.matmul(samples, Tensor(cross_k))
    half_sq = ad.matmul(ad.square(samples), Tensor((0.5 / h2).reshape(-1, 1)))
    ones_row = Tensor(np.ones((1, pts.shape[0])))
    expo = ad.sub(cross, ad.matmul(half_sq, ones_row))
    grid_term = (-0.5 * np.sum(pts * pts / h2, axis=1)).reshape(1, -1)
    expo = ad.add_broadcast_row(expo, Tensor(grid_term))
    dens = ad.matmul(Tensor(np.ones((1, m))), ad.exp(expo))
    return ad.scale(dens, _kernel_norm(h2) / m)


def target_on_grid(target: TargetSpec, grid: Grid, h2: np.ndarray, m_prime: int,
                   rng: np.random.Generator) -> np.ndarray:
    """KDE of m_prime fresh target draws with the same bandwidth, shape (1, G)."""
    draws = target_sample(target, rng, int(m_prime))
    return _kde_numpy(draws, grid.points, np.atleast_1d(np.asarray(h2, dtype=np.float64))
                      ).reshape(1, -1)


def target_kde_on_grid(samples: np.ndarray, grid: Grid, h2: np.ndarray) -> np.ndarray:
    """KDE of an already-drawn target sample set, shape (1, G)."""
    return _kde_numpy(np.asarray(samples, dtype=np.float64), grid.points,
                      np.atleast_1d(np.asarray(h2, dtype=np.float64))).reshape(1, -1)


def penalty_l2(rho: Tensor, rho_bar: np.ndarray, lam: float, grid: Grid) -> Tensor:
    """(lam/2) * sum_i (rho_i - rho_bar_i)^2 * cell volume."""
    diff = ad.sub(rho, Tensor(np.asarray(rho_bar).reshape(rho.shape)))
    return ad.scale(ad.sum_all(ad.square(diff)), 0.5 * lam * grid.cell_volume)


def penalty_kl(rho: Tensor, rho_bar: np.ndarray, lam: float, grid: Grid,
               eps: float = 1e-12) -> Tensor:
    """lam * sum_i rho_i log(rho_i / rho_bar_i) * cell volume, floored at eps."""
    if eps <= 0.0:
        raise ValueError("KL floor must be positive")
    floored = ad.floor_at(rho, eps)
    log_bar = np.log(np.maximum(np.asarray(rho_bar).reshape(rho.shape), eps))
    ratio_log = ad.sub(ad.log(floored), Tensor(log_bar))
    return ad.scale(ad.sum_all(ad.mul(floored, ratio_log)), lam * grid.cell_volume)


def penalty_w2(samples: Tensor, target: TargetSpec, lam: float) -> Tensor:
    """lam * sum_i (x_(i) - q_i)^2 against target quantiles at (i-1/2)/M.

    One-dimensional only.  The sort permutation is computed outside the
    graph and enters as a constant gather; the outer square root of the
    distance is dropped inside the optimizer (monotone reparameterization).
    """
    if samples.shape[1] != 1:
        raise ValueError("order-statistic penalty is one-dimensional")
    m = samples.shape[0]
    order = np.argsort(samples.data[:, 0], kind="stable")
    sorted_samples = ad.gather_rows(samples, order)
    q = target_quantile(target, (np.arange(1, m + 1) - 0.5) / m)
    diff = ad.sub(sorted_samples, Tensor(np.asarray(q).reshape(m, 1)))
    return ad.scale(ad.sum_all(ad.square(diff)), lam)


def w2_order_stat(samples: np.ndarray, target: TargetSpec) -> float:
    """Reported order-statistic 2-Wasserstein distance (with the square root)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    q = target_quantile(target, (np.arange(1, x.size + 1) - 0.5) / x.size)
    return float(np.sqrt(np.sum((x - np.asarray(q)) ** 2)))

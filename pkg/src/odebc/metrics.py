"""Distance metrics for the search plus the statistics used by analyses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ShapeMismatchError, ValidationError
from .rng import generator


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def l2_distance(a, b) -> float:
    """Mean over elements of the squared difference."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); math.inf is the explicit identical flag."""
    mse = l2_distance(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def grad_perceptual_distance(a, b, shape: tuple[int, int, int] | None = None) -> float:
    """Mean squared forward-difference gradient gap plus 0.1x plain L2.

    shape reshapes flat vectors to (H, W, C) so the differences run along
    both spatial axes; without it the input's own axes are used.
    """
    a, b = _pair(a, b)
    if shape is not None:
        a = a.reshape(shape)
        b = b.reshape(shape)
    total = 0.0
    axes = range(min(a.ndim, 2))
    for axis in axes:
        if a.shape[axis] < 2:
            continue
        ga = np.diff(a, axis=axis)
        gb = np.diff(b, axis=axis)
        total += float(np.mean((ga - gb) ** 2))
    return total + 0.1 * l2_distance(a, b)


def pearson_corr(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1 or u.size < 2:
        raise ValidationError("need two equal-length sequences of n >= 2")
    du = u - u.mean()
    dv = v - v.mean()
    denom = math.sqrt(float(du @ du) * float(dv @ dv))
    if denom == 0.0:
        raise ValidationError("pearson_corr undefined for constant sequences")
    return float(du @ dv) / denom


@dataclass(frozen=True)
class Metric:
    """Named distance; search and benchmarks minimize dist."""

    name: str
    _fn: callable

    def dist(self, a, b) -> float:
        return self._fn(a, b)


def get_metric(name: str, shape: tuple[int, int, int] | None = None) -> Metric:
    if name == "l2":
        return Metric("l2", l2_distance)
    if name == "psnr":
        # Negated so that minimizing the metric maximizes PSNR.
        return Metric("psnr", lambda a, b: -psnr(a, b))
    if name == "gradperc":
        return Metric("gradperc", lambda a, b: grad_perceptual_distance(a, b, shape))
    raise ValidationError(f"unknown metric {name!r}")


@dataclass(frozen=True)
class EnergyTestResult:
    statistic: float
    p_value: float
    n_per_group: int


def energy_distance_test(
    a: np.ndarray,
    b: np.ndarray,
    n_permutations: int = 300,
    seed: int = 0,
    max_points: int = 2000,
) -> EnergyTestResult:
    """Two-sample energy-distance permutation test.

    Groups larger than max_points are subsampled (seeded) so the pooled
    distance matrix stays small; the permutation null reuses that matrix.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError("samples must share dimensionality")
    rng = generator(seed, 0)
    if a.shape[0] > max_points:
        a = a[rng.choice(a.shape[0], size=max_points, replace=False)]
    if b.shape[0] > max_points:
        b = b[rng.choice(b.shape[0], size=max_points, replace=False)]
    n, m = a.shape[0], b.shape[0]
    pooled = np.concatenate([a, b], axis=0)
    dmat = cdist(pooled, pooled)
    total = dmat.sum()

    def stat(idx_a, idx_b):
        # Diagonal is zero, so block sums over the pooled matrix suffice.
        sum_a = dmat[np.ix_(idx_a, idx_a)].sum()
        sum_b = dmat[np.ix_(idx_b, idx_b)].sum()
        between = 0.5 * (total - sum_a - sum_b)
        return (2.0 * between / (n * m)
                - sum_a / (n * (n - 1)) - sum_b / (m * (m - 1)))

    idx = np.arange(n + m)
    observed = stat(idx[:n], idx[n:])
    hits = 0
    for _ in range(n_permutations):
        perm = rng.permutation(n + m)
        if stat(perm[:n], perm[n:]) >= observed:
            hits += 1
    p = (1.0 + hits) / (1.0 + n_permutations)
    return EnergyTestResult(statistic=float(observed), p_value=float(p),
                            n_per_group=min(n, m))

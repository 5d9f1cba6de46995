"""Variance-preserving noise schedule with discrete and continuous views.

The discrete grid stores per-step betas and their cumulative products. The
continuous view interpolates log(alpha_bar) piecewise-linearly over the step
index rescaled to t in [0, 1], so grid points reproduce the discrete values
exactly and the drift/diffusion coefficients come from differentiating the
interpolant. t=1 is the noise boundary (step T-1), t=0 is step 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PlanMismatchError, ValidationError


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


class DiscreteSchedule:
    """Discrete VP schedule plus its continuous interpolant.

    Attributes:
        betas: per-step noise rates, shape (T,), each in (0, 1).
        alpha_bars: cumulative products of (1 - beta), shape (T,).
    """

    def __init__(self, betas: np.ndarray):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 2:
            raise ValidationError("schedule needs at least 2 betas")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValidationError("betas must lie strictly inside (0, 1)")
        self.betas = betas
        # Cumulative product in extended precision so the stored float64
        # values are the correctly rounded products, not drifted ones.
        self.alpha_bars = np.cumprod(1.0 - betas, dtype=np.longdouble).astype(
            np.float64
        )
        self._log_alpha_bars = np.log(self.alpha_bars)

    @property
    def total_steps(self) -> int:
        return self.betas.size

    def _interp_log_alpha_bar(self, t):
        """Piecewise-linear value and slope of log(alpha_bar) at t in [0,1]."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValidationError("t must lie in [0, 1]")
        n = self.total_steps - 1
        u = t * n
        k = np.clip(np.floor(u).astype(np.int64), 0, n - 1)
        frac = u - k
        logab = self._log_alpha_bars
        seg = logab[k + 1] - logab[k]
        return logab[k] + frac * seg, seg * n

    def alpha(self, t):
        val, _ = self._interp_log_alpha_bar(t)
        return np.exp(0.5 * val)

    def sigma(self, t):
        val, _ = self._interp_log_alpha_bar(t)
        return np.sqrt(-np.expm1(val))

    def lam(self, t):
        """Half log-SNR log(alpha/sigma); strictly decreasing in t."""
        val, _ = self._interp_log_alpha_bar(t)
        return 0.5 * (val - np.log(-np.expm1(val)))

    def coeffs(self, t):
        """Return (alpha, sigma, f, g2) at continuous time t."""
        val, dval = self._interp_log_alpha_bar(t)
        alpha = np.exp(0.5 * val)
        sigma2 = -np.expm1(val)
        f = 0.5 * dval
        dsigma2 = -2.0 * f * alpha * alpha
        g2 = dsigma2 - 2.0 * f * sigma2
        return alpha, np.sqrt(sigma2), f, g2

    def time_of_lambda(self, target: float) -> float:
        """Invert lam(t) by bisection; lam is strictly decreasing."""
        lo, hi = 0.0, 1.0  # lam(lo) > target > lam(hi)
        if not (self.lam(1.0) <= target <= self.lam(0.0)):
            raise ValidationError("lambda target outside schedule range")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if self.lam(mid) > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def make_linear_vp_schedule(
    total_steps: int, beta_1: float, beta_t: float
) -> DiscreteSchedule:
    """Linear beta ramp from beta_1 to beta_t over total_steps steps."""
    if total_steps < 2:
        raise ValidationError("total_steps must be >= 2")
    if not (0.0 < beta_1 <= beta_t < 1.0):
        raise ValidationError("need 0 < beta_1 <= beta_t < 1")
    k = np.arange(total_steps, dtype=np.float64)
    betas = beta_1 + k * (beta_t - beta_1) / (total_steps - 1)
    return DiscreteSchedule(betas)


def continuous_coeffs(s: DiscreteSchedule, t):
    """Continuous-time (alpha, sigma, f, g2) of the interpolated schedule."""
    return s.coeffs(t)


@dataclass(frozen=True, eq=False)
class TimestepPlan:
    """Strictly decreasing sampling grid from the t=1 boundary down to t=0.

    steps holds discrete indices (T-1 ... 0) for grid-aligned plans and is
    None for purely continuous plans; times always holds the normalized
    [0, 1] instants, descending.
    """

    times: np.ndarray
    steps: np.ndarray | None = None
    segment_spec: tuple[int, ...] | None = None

    @property
    def n_points(self) -> int:
        return self.times.size

    @property
    def n_transitions(self) -> int:
        return self.times.size - 1

    def require_steps(self) -> np.ndarray:
        if self.steps is None:
            raise PlanMismatchError("this solver needs a discrete-index plan")
        return self.steps


def _plan_from_indices(
    s: DiscreteSchedule, ascending: np.ndarray, segment_spec=None
) -> TimestepPlan:
    if np.any(np.diff(ascending) <= 0):
        raise ValidationError("resampled plan has duplicate indices")
    if ascending[0] != 0 or ascending[-1] != s.total_steps - 1:
        raise ValidationError("plan must span step 0 through step T-1")
    steps = ascending[::-1].copy()
    times = steps.astype(np.float64) / (s.total_steps - 1)
    return TimestepPlan(times=times, steps=steps, segment_spec=segment_spec)


def resample_timesteps(s: DiscreteSchedule, spec) -> TimestepPlan:
    """Reduce the T-step grid to a plan: uniform count or per-segment counts.

    An integer spec places that many evenly spaced indices (ends included).
    A sequence spec partitions [0, T) into equal ranges and spaces each
    segment's count inside its range; rounding is half-up and collisions
    are an error rather than silently deduped.
    """
    total = s.total_steps
    if np.isscalar(spec):
        n = int(spec)
        if n < 2 or n > total:
            raise ValidationError(f"uniform plan size {n} outside [2, {total}]")
        idx = _round_half_up(np.linspace(0.0, total - 1, n))
        return _plan_from_indices(s, idx)

    counts = [int(c) for c in spec]
    if not counts or any(c < 1 for c in counts):
        raise ValidationError("segment counts must be positive")
    if sum(counts) > total:
        raise ValidationError("segment counts sum exceeds total steps")
    size_per, extra = divmod(total, len(counts))
    start = 0
    picked = []
    for i, count in enumerate(counts):
        size = size_per + (1 if i < extra else 0)
        if count > size:
            raise ValidationError(
                f"segment {i} wants {count} steps but its range holds {size}"
            )
        if count == 1:
            picked.append(np.array([start], dtype=np.int64))
        else:
            stride = (size - 1) / (count - 1)
            picked.append(
                _round_half_up(start + stride * np.arange(count, dtype=np.float64))
            )
        start += size
    return _plan_from_indices(s, np.concatenate(picked), tuple(counts))


def uniform_continuous_plan(n_steps: int) -> TimestepPlan:
    """Evenly spaced continuous plan with n_steps transitions over [1, 0]."""
    if n_steps < 1:
        raise ValidationError("need at least one step")
    times = np.linspace(1.0, 0.0, n_steps + 1)
    return TimestepPlan(times=times, steps=None)


def identity_plan(s: DiscreteSchedule) -> TimestepPlan:
    """The full discrete grid, T-1 down to 0."""
    return resample_timesteps(s, s.total_steps)

"""Reverse-process solvers: ancestral DDPM, DDIM, DPM-Solver-2, fine Euler.

All solvers share one calling convention: the state is a flat vector (or a
batch of them), the model provides eps(x, cond, t) on normalized time, and
the timestep plan runs from the noise boundary down to zero. The three
deterministic solvers are pure functions of their inputs; DDPM derives its
noise from (seed, transition index) with a counter-based generator, so its
output never depends on evaluation order either.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rng
from .errors import PlanMismatchError, ValidationError
from .schedule import DiscreteSchedule, TimestepPlan


class SolverKind(enum.Enum):
    DDPM_ANCESTRAL = "ddpm"
    DDIM = "ddim"
    DPM_SOLVER_2 = "dpm2"
    EULER_REF = "euler"


@dataclass(frozen=True, eq=False)
class SolverConfig:
    kind: SolverKind
    schedule: DiscreteSchedule
    plan: TimestepPlan
    noise_seed: int = 0
    ddpm_variance: str = "lower-bound"

    def __post_init__(self):
        if self.ddpm_variance != "lower-bound":
            raise ValidationError("only the lower-bound DDPM variance is supported")
        if self.kind is SolverKind.EULER_REF:
            if self.plan.steps is not None or self.plan.n_transitions < 1000:
                raise PlanMismatchError(
                    "Euler reference needs a continuous uniform plan, >= 1000 steps"
                )
            gaps = np.diff(self.plan.times)
            if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12):
                raise PlanMismatchError("Euler reference plan must be uniform")
        elif self.kind in (SolverKind.DDPM_ANCESTRAL, SolverKind.DDIM):
            self.plan.require_steps()
        if self.plan.n_points < 2:
            raise PlanMismatchError("plan needs at least 2 points")

    def label(self) -> str:
        # Discrete plans are named by grid size (ddpm-1000 is the full
        # chain); the continuous reference is named by its step count.
        if self.plan.steps is not None:
            return f"{self.kind.value}-{self.plan.n_points}"
        return f"{self.kind.value}-{self.plan.n_transitions}"


def _check_state(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("state tensor contains non-finite values")
    return x


def ddpm_sample(model, s: DiscreteSchedule, cfg: SolverConfig, x_t, cond):
    """Ancestral sampling with the lower-bound variance, skipped-step form.

    For a transition from step k to k' < k the effective step has
    beta = 1 - abar_k / abar_k' and variance (1 - abar_k')/(1 - abar_k) * beta;
    the final step to k'=0 adds no noise.
    """
    if cfg.kind is not SolverKind.DDPM_ANCESTRAL:
        raise PlanMismatchError("config is not DDPM_ANCESTRAL")
    steps = cfg.plan.require_steps()
    abar = s.alpha_bars
    x = _check_state(x_t)
    n = s.total_steps - 1
    for i in range(cfg.plan.n_transitions):
        k, kp = int(steps[i]), int(steps[i + 1])
        a_k, a_p = abar[k], abar[kp]
        eps = model.eps(x, cond, k / n)
        x0_hat = (x - math.sqrt(1.0 - a_k) * eps) / math.sqrt(a_k)
        beta = 1.0 - a_k / a_p
        mean = (
            math.sqrt(a_p) * beta / (1.0 - a_k) * x0_hat
            + math.sqrt(a_k / a_p) * (1.0 - a_p) / (1.0 - a_k) * x
        )
        if kp == 0:
            x = mean
        else:
            var = (1.0 - a_p) / (1.0 - a_k) * beta
            x = mean + math.sqrt(var) * rng.gauss(cfg.noise_seed, i, x.shape)
    return x


def ddim_solve(model, s: DiscreteSchedule, cfg: SolverConfig, x_t, cond):
    """Deterministic update x' = a'(x - s_k eps)/a_k + s' eps on sqrt(abar)."""
    if cfg.kind is not SolverKind.DDIM:
        raise PlanMismatchError("config is not DDIM")
    steps = cfg.plan.require_steps()
    abar = s.alpha_bars
    x = _check_state(x_t)
    n = s.total_steps - 1
    for i in range(cfg.plan.n_transitions):
        k, kp = int(steps[i]), int(steps[i + 1])
        eps = model.eps(x, cond, k / n)
        ratio = math.sqrt(abar[kp] / abar[k])
        x = ratio * (x - math.sqrt(1.0 - abar[k]) * eps) \
            + math.sqrt(1.0 - abar[kp]) * eps
    return x


@lru_cache(maxsize=1024)
def _dpm2_grid(s: DiscreteSchedule, plan: TimestepPlan):
    """Midpoint times and (alpha, sigma, h) tables for one plan, solved once."""
    times = plan.times
    lam = np.asarray(s.lam(times), dtype=np.float64)
    h = np.diff(lam)
    mids = np.array([
        s.time_of_lambda(float(lam[i] + 0.5 * h[i])) for i in range(h.size)
    ])
    return (
        h,
        mids,
        np.asarray(s.alpha(times)),
        np.asarray(s.alpha(mids)),
        np.asarray(s.sigma(times)),
        np.asarray(s.sigma(mids)),
    )


def dpm_solver2_solve(model, s: DiscreteSchedule, cfg: SolverConfig, x_t, cond):
    """Second-order exponential integrator with a log-SNR midpoint stage."""
    if cfg.kind is not SolverKind.DPM_SOLVER_2:
        raise PlanMismatchError("config is not DPM_SOLVER_2")
    x = _check_state(x_t)
    h, mids, a_ends, a_mids, s_ends, s_mids = _dpm2_grid(s, cfg.plan)
    times = cfg.plan.times
    for i in range(cfg.plan.n_transitions):
        eps_s = model.eps(x, cond, float(times[i]))
        u = (a_mids[i] / a_ends[i]) * x \
            - s_mids[i] * math.expm1(0.5 * h[i]) * eps_s
        eps_m = model.eps(u, cond, float(mids[i]))
        x = (a_ends[i + 1] / a_ends[i]) * x \
            - s_ends[i + 1] * math.expm1(h[i]) * eps_m
    return x


def euler_reference_solve(model, s: DiscreteSchedule, cfg: SolverConfig, x_t, cond):
    """Explicit Euler on dx/dt = f x + g^2/(2 sigma) eps; the ODE oracle."""
    if cfg.kind is not SolverKind.EULER_REF:
        raise PlanMismatchError("config is not EULER_REF")
    x = _check_state(x_t)
    times = cfg.plan.times
    _, sigma, f, g2 = s.coeffs(times[:-1])
    gain = g2 / (2.0 * sigma)
    dts = np.diff(times)
    for i in range(cfg.plan.n_transitions):
        eps = model.eps(x, cond, float(times[i]))
        x = x + dts[i] * (f[i] * x + gain[i] * eps)
    return x


_DISPATCH = {
    SolverKind.DDPM_ANCESTRAL: ddpm_sample,
    SolverKind.DDIM: ddim_solve,
    SolverKind.DPM_SOLVER_2: dpm_solver2_solve,
    SolverKind.EULER_REF: euler_reference_solve,
}


def run_solver(model, cfg: SolverConfig, x_t, cond):
    """Dispatch any configured solver, stochastic ones included."""
    return _DISPATCH[cfg.kind](model, cfg.schedule, cfg, x_t, cond)


def project(model, cfg: SolverConfig, x_t, cond):
    """The projection h(x_T, cond): deterministic solvers only."""
    if cfg.kind is SolverKind.DDPM_ANCESTRAL:
        raise ValidationError("projection requires a deterministic solver")
    return run_solver(model, cfg, x_t, cond)

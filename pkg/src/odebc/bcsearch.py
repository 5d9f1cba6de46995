"""Monte Carlo search for a reusable boundary condition.

A candidate x_T is scored by projecting it through the deterministic solver
against every reference pair and summing the distances; the best candidate
is the argmin. Candidates are a pure function of (seed, index), so prefix
subsets of a larger candidate set are exactly the smaller set, and the K x R
objective table can be subset instead of re-solved for the ablations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .metrics import Metric
from .rng import gauss
from .sampler import SolverConfig, project


@dataclass(frozen=True)
class CandidateSet:
    """K standard-normal boundary conditions, materialized lazily."""

    seed: int
    size: int
    dim: int

    def __post_init__(self):
        if self.size < 1:
            raise ValidationError("candidate set needs K >= 1")

    def candidate(self, index: int) -> np.ndarray:
        if not 0 <= index < self.size:
            raise ValidationError(f"candidate index {index} outside [0, {self.size})")
        return gauss(self.seed, index, (self.dim,))


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    """R paired (z, y) tensors plus where they came from."""

    pairs: tuple
    provenance: str = ""

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise ValidationError("reference set needs R >= 1 pairs")
        z_shape = self.pairs[0][0].shape
        y_shape = self.pairs[0][1].shape
        for z, y in self.pairs:
            if z.shape != z_shape or y.shape != y_shape:
                raise ShapeMismatchError("reference pairs must share shapes")

    def __len__(self):
        return len(self.pairs)

    def subset(self, indices) -> "ReferenceSet":
        return ReferenceSet(
            pairs=tuple(self.pairs[i] for i in indices),
            provenance=f"{self.provenance}[subset]",
        )


@dataclass(frozen=True, eq=False)
class SearchResult:
    best_index: int
    best_bc: np.ndarray
    objective_table: np.ndarray  # K x R distances
    per_candidate_sums: np.ndarray


def objective(bc, refs: ReferenceSet, solver: SolverConfig, model,
              metric: Metric):
    """Sum of metric(project(bc, y_i), z_i), accumulated in ascending i."""
    bc = np.asarray(bc, dtype=np.float64)
    if bc.shape != refs.pairs[0][0].shape:
        raise ShapeMismatchError(
            f"bc shape {bc.shape} != reference HR shape {refs.pairs[0][0].shape}"
        )
    per_ref = [
        metric.dist(project(model, solver, bc, y), z) for z, y in refs.pairs
    ]
    total = 0.0
    for value in per_ref:
        total += value
    return total, per_ref


def objective_table(cands: CandidateSet, refs: ReferenceSet,
                    solver: SolverConfig, model, metric: Metric,
                    workers: int = 1) -> np.ndarray:
    """K x R distance table; rows computed independently, one per candidate.

    Row k never depends on the worker count or on other rows, so tables are
    bit-identical for any `workers`.
    """

    def row(k: int) -> list[float]:
        return objective(cands.candidate(k), refs, solver, model, metric)[1]

    indices = range(cands.size)
    if workers <= 1:
        rows = [row(k) for k in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, indices))
    return np.asarray(rows, dtype=np.float64)


def result_from_table(cands: CandidateSet, table: np.ndarray) -> SearchResult:
    sums = np.empty(table.shape[0])
    for k in range(table.shape[0]):
        total = 0.0
        for value in table[k]:
            total += value
        sums[k] = total
    best = int(np.argmin(sums))  # argmin takes the lowest index on ties
    return SearchResult(
        best_index=best,
        best_bc=cands.candidate(best),
        objective_table=table,
        per_candidate_sums=sums,
    )


def search_optimal_bc(cands: CandidateSet, refs: ReferenceSet,
                      solver: SolverConfig, model, metric: Metric,
                      workers: int = 1) -> SearchResult:
    table = objective_table(cands, refs, solver, model, metric, workers)
    return result_from_table(cands, table)


def sample_with_bc(bc, y, solver: SolverConfig, model) -> np.ndarray:
    """The production call: one deterministic projection of the shared BC."""
    return project(model, solver, bc, y)


@dataclass(frozen=True, eq=False)
class GainReport:
    searched_mean: float
    random_means: np.ndarray
    random_mean: float
    random_std: float
    gain_sigmas: float  # (random_mean - searched_mean) / random_std


def held_out_gain(bc, holdout: ReferenceSet, solver: SolverConfig, model,
                  metric: Metric, n_random: int, seed: int,
                  workers: int = 1) -> GainReport:
    """Mean held-out distance of bc versus n_random fresh random BCs."""
    if n_random < 2:
        raise ValidationError("need n_random >= 2 for a std estimate")
    dim = np.asarray(bc).size
    rand_cands = CandidateSet(seed=seed, size=n_random, dim=dim)
    table = objective_table(rand_cands, holdout, solver, model, metric, workers)
    random_means = table.mean(axis=1)
    searched = objective(bc, holdout, solver, model, metric)[0] / len(holdout)
    rand_mean = float(random_means.mean())
    rand_std = float(random_means.std(ddof=1))
    return GainReport(
        searched_mean=float(searched),
        random_means=random_means,
        random_mean=rand_mean,
        random_std=rand_std,
        gain_sigmas=(rand_mean - searched) / rand_std,
    )

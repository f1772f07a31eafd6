"""Map a calibration score matrix and alpha to per-stage thresholds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import (
    Method,
    PredictionCandidates,
    ScoreMatrix,
    SetSizeIndex,
    ThresholdVector,
    _order_statistic,
    as_score_matrix,
    check_alpha,
)


class Objective(str, enum.Enum):
    MIN_AVG_SET_SIZE = "min_avg_set_size"
    MAX_E2E_COVERAGE = "max_e2e_coverage"


@dataclass(frozen=True)
class TunedSearchSpec:
    """Grid search settings for the tuned Bonferroni allocation.

    ``tuning_matrix`` must be held out from the calibration data.
    ``candidates`` (aligned with the tuning rows) is required for the
    set-size objective.
    """

    tuning_matrix: ScoreMatrix
    grid_step: float = 0.005
    min_per_stage: float | None = None
    objective: Objective = Objective.MIN_AVG_SET_SIZE
    candidates: PredictionCandidates | None = None

    def __post_init__(self):
        object.__setattr__(self, "tuning_matrix", as_score_matrix(self.tuning_matrix))
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if self.min_per_stage is None:
            object.__setattr__(self, "min_per_stage", self.grid_step)
        elif self.min_per_stage <= 0:
            raise ValueError("min_per_stage must be positive")


def calibrate_independent(cal, alpha: float) -> ThresholdVector:
    """Each stage gets its own conformal quantile at level ``alpha``."""
    cal = as_score_matrix(cal)
    alpha = check_alpha(alpha)
    q = [_order_statistic(cal.column(k), alpha) for k in range(cal.n_stages)]
    return ThresholdVector(tuple(q), Method.INDEPENDENT, alpha, cal.n_samples, n_quantiles=cal.n_stages)


def calibrate_bonferroni(cal, alpha: float) -> ThresholdVector:
    """Each stage gets a conformal quantile at level ``alpha / K``."""
    cal = as_score_matrix(cal)
    alpha = check_alpha(alpha)
    K = cal.n_stages
    per_stage = alpha / K
    q = [_order_statistic(cal.column(k), per_stage) for k in range(K)]
    return ThresholdVector(
        tuple(q), Method.BONFERRONI, alpha, cal.n_samples,
        allocation=(per_stage,) * K, n_quantiles=K,
    )


def calibrate_pasc(cal, alpha: float) -> ThresholdVector:
    """One conformal quantile of the row-wise max score, shared by all stages."""
    cal = as_score_matrix(cal)
    alpha = check_alpha(alpha)
    qhat = _order_statistic(cal.scores.max(axis=1), alpha)
    return ThresholdVector((qhat,) * cal.n_stages, Method.PASC, alpha, cal.n_samples, n_quantiles=1)


def allocation_grid(alpha: float, n_stages: int, grid_step: float, min_per_stage: float) -> Iterator[tuple[float, ...]]:
    """All allocations on the grid summing to ``alpha``, in lexicographic order."""
    units = alpha / grid_step
    total = round(units)
    if abs(units - total) > 1e-9 * max(1.0, units):
        raise ValueError(f"grid_step {grid_step!r} does not divide alpha {alpha!r}")
    lo = math.ceil(min_per_stage / grid_step - 1e-9)
    if lo * n_stages > total:
        raise ValueError(
            f"empty allocation grid: {n_stages} stages x min {min_per_stage!r} exceeds alpha {alpha!r}"
        )

    def compositions(remaining: int, parts: int):
        if parts == 1:
            yield (remaining,)
            return
        for first in range(lo, remaining - lo * (parts - 1) + 1):
            for rest in compositions(remaining - first, parts - 1):
                yield (first,) + rest

    for units_k in compositions(total, n_stages):
        yield tuple(alpha * u / total for u in units_k)


def _leaked_ids(cal: ScoreMatrix, tuning: ScoreMatrix) -> set[str]:
    if cal.sample_ids is None or tuning.sample_ids is None:
        return set()
    return set(cal.sample_ids) & set(tuning.sample_ids)


def calibrate_tuned_bonferroni(cal, alpha: float, spec: TunedSearchSpec) -> ThresholdVector:
    """Search stage-wise budgets on a grid and keep the best on held-out tuning data.

    Every grid allocation sums to ``alpha``. The uniform allocation
    ``alpha / K`` is always evaluated as well, so the result is never worse
    than plain Bonferroni on the tuning objective. Ties go to the
    lexicographically smallest allocation.
    """
    cal = as_score_matrix(cal)
    alpha = check_alpha(alpha)
    K = cal.n_stages
    tuning = spec.tuning_matrix
    if tuning.n_stages != K:
        raise ValueError(f"tuning matrix has {tuning.n_stages} stages, calibration has {K}")
    leaked = _leaked_ids(cal, tuning)
    if leaked:
        raise ValueError(f"tuning leakage: {len(leaked)} sample_ids shared with calibration, e.g. {sorted(leaked)[0]!r}")

    if spec.objective is Objective.MIN_AVG_SET_SIZE:
        if spec.candidates is None:
            raise ValueError("min_avg_set_size objective needs candidates for the tuning set")
        if spec.candidates.n_samples != tuning.n_samples:
            raise ValueError("tuning candidates are not aligned with the tuning matrix")
        index = SetSizeIndex(spec.candidates)

        def score(q):
            return index.avg_set_size(q)
    else:
        tune = tuning.scores

        def score(q):
            # negated so that smaller is better for both objectives
            return -float(np.mean(np.all(tune <= q, axis=1)))

    cache: dict[tuple[int, float], float] = {}

    def thresholds_for(alloc):
        q = []
        for k, a in enumerate(alloc):
            key = (k, a)
            if key not in cache:
                cache[key] = _order_statistic(cal.column(k), a)
            q.append(cache[key])
        return np.asarray(q)

    candidates = set(allocation_grid(alpha, K, spec.grid_step, spec.min_per_stage))
    candidates.add((alpha / K,) * K)
    best = None
    for alloc in sorted(candidates):
        q = thresholds_for(alloc)
        value = score(q)
        if best is None or value < best[0]:
            best = (value, alloc, q)
    _, alloc, q = best
    return ThresholdVector(
        tuple(float(x) for x in q), Method.TUNED_BONFERRONI, alpha, cal.n_samples,
        allocation=alloc, n_quantiles=len(cache),
    )


def calibrate(cal, alpha: float, method: Method | str, tuning: TunedSearchSpec | None = None) -> ThresholdVector:
    method = Method(method)
    if method is Method.INDEPENDENT:
        return calibrate_independent(cal, alpha)
    if method is Method.BONFERRONI:
        return calibrate_bonferroni(cal, alpha)
    if method is Method.PASC:
        return calibrate_pasc(cal, alpha)
    if tuning is None:
        raise ValueError("tuned_bonferroni requires a TunedSearchSpec")
    return calibrate_tuned_bonferroni(cal, alpha, tuning)

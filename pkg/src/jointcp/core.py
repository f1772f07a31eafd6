"""Score containers, the split-conformal quantile and the joint-max reduction."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


class RangeWarning(UserWarning):
    """Scores fall outside the unit interval."""


class Method(str, enum.Enum):
    INDEPENDENT = "independent"
    BONFERRONI = "bonferroni"
    TUNED_BONFERRONI = "tuned_bonferroni"
    PASC = "pasc"


ALLOCATION_TOL = 1e-12


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def quantile_rank(n: int, alpha: float) -> int:
    """Rank ``ceil((n + 1)(1 - alpha))`` of the conformal order statistic.

    ``alpha`` is read through its shortest decimal repr so that e.g. 0.3
    means 3/10 rather than the nearest binary float.
    """
    a = Fraction(repr(check_alpha(alpha)))
    return math.ceil((n + 1) * (1 - a))


def _finite_1d(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError("empty calibration set")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise ValueError(f"non-finite score {arr[bad[0]]!r} at index {int(bad[0])}")
    return arr


def _order_statistic(values: np.ndarray, alpha: float) -> float:
    n = values.shape[0]
    r = quantile_rank(n, alpha)
    if r > n:
        return math.inf
    return float(np.partition(values, r - 1)[r - 1])


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """Split-conformal threshold at miscoverage ``alpha``.

    Returns the r-th smallest score with ``r = ceil((n + 1)(1 - alpha))``,
    or ``+inf`` when ``r > n``.
    """
    return _order_statistic(_finite_1d(scores), alpha)


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """n samples x K stages of nonconformity scores.

    Scores are stored as a read-only float64 array in column-major order,
    so each stage column is contiguous for the per-stage quantiles and the
    row-wise max. Values outside [0, 1] are kept but trigger a
    :class:`RangeWarning`.
    """

    scores: np.ndarray
    sample_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        arr = np.array(self.scores, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        arr = np.asfortranarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"scores must be a 2-d grid, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise ValueError("empty calibration set")
        if arr.shape[1] == 0:
            raise ValueError("score matrix needs at least one stage")
        finite = np.isfinite(arr)
        if not finite.all():
            i, k = np.argwhere(~finite)[0]
            raise ValueError(f"non-finite score {arr[i, k]!r} at row {int(i)}, stage {int(k)}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            warnings.warn("scores outside [0, 1]", RangeWarning, stacklevel=3)
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)
        if self.sample_ids is not None:
            ids = tuple(str(s) for s in self.sample_ids)
            if len(ids) != arr.shape[0]:
                raise ValueError(f"{len(ids)} sample_ids for {arr.shape[0]} rows")
            if len(set(ids)) != len(ids):
                seen = set()
                dup = next(s for s in ids if s in seen or seen.add(s))
                raise ValueError(f"duplicate sample_id {dup!r}")
            object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_stages(self) -> int:
        return self.scores.shape[1]

    def column(self, k: int) -> np.ndarray:
        return self.scores[:, k]

    def take(self, rows) -> ScoreMatrix:
        rows = np.asarray(rows, dtype=int)
        ids = None if self.sample_ids is None else tuple(self.sample_ids[i] for i in rows)
        return ScoreMatrix(self.scores[rows], ids)

    def __eq__(self, other):
        if not isinstance(other, ScoreMatrix):
            return NotImplemented
        return self.sample_ids == other.sample_ids and np.array_equal(self.scores, other.scores)

    def __len__(self):
        return self.n_samples


def as_score_matrix(data) -> ScoreMatrix:
    return data if isinstance(data, ScoreMatrix) else ScoreMatrix(np.asarray(data, dtype=float))


@dataclass(frozen=True)
class ThresholdVector:
    """Per-stage acceptance thresholds plus how they were obtained."""

    thresholds: tuple[float, ...]
    method: Method
    alpha: float
    n_cal: int
    allocation: tuple[float, ...] | None = None
    n_quantiles: int = 0

    def __post_init__(self):
        th = tuple(float(q) for q in self.thresholds)
        if not th:
            raise ValueError("threshold vector is empty")
        for k, q in enumerate(th):
            if math.isnan(q) or q == -math.inf:
                raise ValueError(f"invalid threshold {q!r} for stage {k}")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "alpha", check_alpha(self.alpha))
        if self.method is Method.PASC and len(set(th)) != 1:
            raise ValueError("pasc thresholds must all be identical")
        if self.allocation is not None:
            alloc = tuple(float(a) for a in self.allocation)
            if len(alloc) != len(th):
                raise ValueError("allocation length does not match thresholds")
            if sum(alloc) > self.alpha + ALLOCATION_TOL:
                raise ValueError(f"allocation sums to {sum(alloc)!r} > alpha={self.alpha!r}")
            object.__setattr__(self, "allocation", alloc)

    @property
    def n_stages(self) -> int:
        return len(self.thresholds)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=float)


@dataclass(frozen=True)
class AcceptanceOutcome:
    per_stage_covered: tuple[bool, ...]
    e2e_covered: bool
    max_score: float


def joint_max_scores(matrix) -> np.ndarray:
    """Row-wise maximum over stages."""
    return as_score_matrix(matrix).scores.max(axis=1)


def accept(row_scores: Sequence[float], thresholds: ThresholdVector | Sequence[float]) -> AcceptanceOutcome:
    """Apply per-stage thresholds (inclusive) to one sample."""
    q = thresholds.thresholds if isinstance(thresholds, ThresholdVector) else tuple(thresholds)
    row = [float(s) for s in row_scores]
    if len(row) != len(q):
        raise ValueError(f"row has {len(row)} stages but {len(q)} thresholds were given")
    covered = tuple(s <= t for s, t in zip(row, q))
    return AcceptanceOutcome(covered, all(covered), max(row))


Candidate = tuple[str, float]


@dataclass(frozen=True)
class PredictionCandidates:
    """Per-sample, per-stage candidate labels with their nonconformity scores.

    ``candidates[i][k]`` is a tuple of ``(label, score)`` pairs, or ``None``
    when stage ``k`` of sample ``i`` has no label space. ``true_labels``
    mirrors that layout.
    """

    candidates: tuple[tuple[tuple[Candidate, ...] | None, ...], ...]
    true_labels: tuple[tuple[str | None, ...], ...] | None = None

    def __post_init__(self):
        rows = []
        for i, row in enumerate(self.candidates):
            stages = []
            for k, cands in enumerate(row):
                if cands is None:
                    stages.append(None)
                    continue
                cands = tuple((str(lab), float(s)) for lab, s in cands)
                if not cands:
                    raise ValueError(f"empty candidate list at sample {i}, stage {k}")
                if not all(math.isfinite(s) for _, s in cands):
                    raise ValueError(f"non-finite candidate score at sample {i}, stage {k}")
                stages.append(cands)
            rows.append(tuple(stages))
        if len({len(r) for r in rows}) > 1:
            raise ValueError("candidate rows have differing stage counts")
        object.__setattr__(self, "candidates", tuple(rows))
        if self.true_labels is not None:
            tl = tuple(tuple(None if t is None else str(t) for t in r) for r in self.true_labels)
            if len(tl) != len(rows):
                raise ValueError("true_labels length does not match candidates")
            object.__setattr__(self, "true_labels", tl)

    @property
    def n_samples(self) -> int:
        return len(self.candidates)

    @property
    def n_stages(self) -> int:
        return len(self.candidates[0]) if self.candidates else 0

    def out_of_set(self) -> list[tuple[int, int]]:
        """(sample, stage) pairs whose true label is missing from the candidate list."""
        if self.true_labels is None:
            return []
        out = []
        for i, (row, labels) in enumerate(zip(self.candidates, self.true_labels)):
            for k, (cands, t) in enumerate(zip(row, labels)):
                if cands is not None and t is not None and t not in {lab for lab, _ in cands}:
                    out.append((i, k))
        return out

    def take(self, rows) -> PredictionCandidates:
        rows = [int(i) for i in rows]
        tl = None if self.true_labels is None else tuple(self.true_labels[i] for i in rows)
        return PredictionCandidates(tuple(self.candidates[i] for i in rows), tl)


class SetSizeIndex:
    """Sorted per-stage candidate scores for fast average set-size queries."""

    def __init__(self, cands: PredictionCandidates):
        per_stage = [[] for _ in range(cands.n_stages)]
        self.n_pairs = 0
        for row in cands.candidates:
            for k, c in enumerate(row):
                if c is not None:
                    per_stage[k].extend(s for _, s in c)
                    self.n_pairs += 1
        self.sorted_scores = [np.sort(np.asarray(s, dtype=float)) for s in per_stage]

    def avg_set_size(self, thresholds: Sequence[float]) -> float:
        if self.n_pairs == 0:
            return math.nan
        total = sum(
            int(np.searchsorted(s, q, side="right"))
            for s, q in zip(self.sorted_scores, thresholds)
        )
        return total / self.n_pairs

"""Coverage and set-size metrics, slicing, sweeps and calibration cost."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .calibrators import TunedSearchSpec, calibrate
from .core import (
    Method,
    PredictionCandidates,
    ScoreMatrix,
    ThresholdVector,
    as_score_matrix,
)
from .synthetic import ROLE_CAL, ROLE_TEST, ROLE_TUNE, SyntheticSpec, derive_rng, generate

__all__ = [
    "CoverageReport",
    "PredictionCandidates",
    "PredictionSetResult",
    "SliceKind",
    "SliceSpec",
    "SliceEntry",
    "ScorePool",
    "SweepCell",
    "SweepReport",
    "CostRecord",
    "MethodComparison",
    "aggregate_reports",
    "calibration_cost",
    "evaluate_coverage",
    "prediction_sets",
    "run_sweep",
    "slice_report",
]


@dataclass(frozen=True)
class SliceEntry:
    label: str
    n: int
    e2e_coverage: float
    stage_coverage: tuple[float, ...]


@dataclass(frozen=True)
class CoverageReport:
    """Coverage of one threshold vector on one test set (or a seed average).

    ``stage_coverage`` and ``e2e_coverage`` are threshold coverage of the
    stored stage scores. ``set_coverage`` is the fraction of samples whose
    true label lands in the prediction set, per stage, and is only filled
    in when candidates are supplied.
    """

    e2e_coverage: float
    stage_coverage: tuple[float, ...]
    n_samples: int
    method: Method | None = None
    avg_set_size: float | None = None
    set_coverage: tuple[float | None, ...] | None = None
    slices: tuple[SliceEntry, ...] = ()
    slice_name: str | None = None
    seeds: int = 1
    e2e_std: float | None = None
    avg_set_size_std: float | None = None


@dataclass(frozen=True)
class MethodComparison:
    """Coverage reports of several calibrators on the same test data."""

    reports: tuple[CoverageReport, ...]
    label: str | None = None

    def by_method(self, method: Method | str) -> CoverageReport:
        method = Method(method)
        return next(r for r in self.reports if r.method is method)


def _check_stages(test: ScoreMatrix, thresholds: ThresholdVector):
    if test.n_stages != thresholds.n_stages:
        raise ValueError(f"test matrix has {test.n_stages} stages, thresholds have {thresholds.n_stages}")


def evaluate_coverage(test, thresholds: ThresholdVector, candidates: PredictionCandidates | None = None) -> CoverageReport:
    test = as_score_matrix(test)
    _check_stages(test, thresholds)
    covered = test.scores <= thresholds.as_array()
    report = CoverageReport(
        e2e_coverage=float(covered.all(axis=1).mean()),
        stage_coverage=tuple(float(c) for c in covered.mean(axis=0)),
        n_samples=test.n_samples,
        method=thresholds.method,
    )
    if candidates is not None:
        sets = prediction_sets(candidates, thresholds)
        report = replace(report, avg_set_size=sets.avg_set_size, set_coverage=sets.set_coverage)
    return report


@dataclass(frozen=True)
class PredictionSetResult:
    sets: tuple[tuple[tuple[str, ...] | None, ...], ...]
    avg_set_size: float | None
    set_coverage: tuple[float | None, ...]
    n_pairs: int


def prediction_sets(cands: PredictionCandidates, thresholds: ThresholdVector) -> PredictionSetResult:
    """Labels whose score is at most the stage threshold, per sample and stage.

    ``avg_set_size`` averages over (sample, stage) pairs that carry a
    candidate list. ``set_coverage[k]`` is the share of samples with a known
    true label at stage k whose label made it into the set (None when no
    such sample exists).
    """
    if cands.n_stages > thresholds.n_stages:
        raise ValueError(f"no threshold for stage {thresholds.n_stages} (candidates have {cands.n_stages} stages)")
    q = thresholds.thresholds
    sets, total, pairs = [], 0, 0
    hits = [0] * cands.n_stages
    known = [0] * cands.n_stages
    truth = cands.true_labels
    for i, row in enumerate(cands.candidates):
        out = []
        for k, c in enumerate(row):
            if c is None:
                out.append(None)
                continue
            chosen = tuple(lab for lab, s in c if s <= q[k])
            out.append(chosen)
            total += len(chosen)
            pairs += 1
            t = truth[i][k] if truth is not None else None
            if t is not None:
                known[k] += 1
                hits[k] += t in chosen
        sets.append(tuple(out))
    set_cov = tuple(h / n if n else None for h, n in zip(hits, known))
    return PredictionSetResult(tuple(sets), total / pairs if pairs else None, set_cov, pairs)


class SliceKind(str, enum.Enum):
    QUANTILE_BINS = "quantile_bins"
    GROUP_LABEL = "group_label"


@dataclass(frozen=True)
class SliceSpec:
    kind: SliceKind
    stage: int | None = None
    n_bins: int = 5
    field: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SliceKind(self.kind))
        if self.kind is SliceKind.QUANTILE_BINS:
            if self.stage is None or self.stage < 0:
                raise ValueError("quantile slicing needs a stage index")
            if self.n_bins < 2:
                raise ValueError("quantile slicing needs n_bins >= 2")
        elif not self.field:
            raise ValueError("group slicing needs a field name")

    @property
    def name(self) -> str:
        if self.kind is SliceKind.QUANTILE_BINS:
            return f"stage {self.stage} score quantile"
        return f"group {self.field}"

    @classmethod
    def parse(cls, text: str) -> SliceSpec:
        """``quantile:STAGE[:BINS]`` or ``group:FIELD``."""
        kind, _, rest = text.partition(":")
        if kind == "quantile":
            stage, _, bins = rest.partition(":")
            return cls(SliceKind.QUANTILE_BINS, stage=int(stage), n_bins=int(bins or 5))
        if kind == "group":
            return cls(SliceKind.GROUP_LABEL, field=rest)
        raise ValueError(f"bad slice spec {text!r}")


def quantile_bins(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-population bin index per value; values on an edge go to the lower bin."""
    v = np.asarray(values, dtype=float)
    ranks = np.arange(1, n_bins) / n_bins
    edges = np.quantile(v, ranks, method="inverted_cdf")
    return np.searchsorted(edges, v, side="left")


def slice_report(
    test,
    thresholds: ThresholdVector,
    slice: SliceSpec,
    group_labels: Sequence[str] | None = None,
) -> CoverageReport:
    """Global coverage plus a per-slice breakdown.

    Quantile bins use the test set's own score distribution at the given
    stage. Slices are listed in bin order, or sorted by group label.
    """
    test = as_score_matrix(test)
    _check_stages(test, thresholds)
    covered = test.scores <= thresholds.as_array()
    if slice.kind is SliceKind.QUANTILE_BINS:
        if slice.stage >= test.n_stages:
            raise ValueError(f"slice stage {slice.stage} out of range for {test.n_stages} stages")
        bins = quantile_bins(test.column(slice.stage), slice.n_bins)
        keys = [(f"Q{b + 1}", bins == b) for b in range(slice.n_bins)]
    else:
        if group_labels is None:
            raise ValueError(f"group slicing on {slice.field!r} needs per-sample labels")
        labels = np.asarray([str(g) for g in group_labels], dtype=object)
        if labels.shape[0] != test.n_samples:
            raise ValueError(f"{labels.shape[0]} group labels for {test.n_samples} samples")
        keys = [(g, labels == g) for g in sorted(set(labels))]
    entries = []
    for label, mask in keys:
        n = int(mask.sum())
        sub = covered[mask]
        e2e = float(sub.all(axis=1).mean()) if n else float("nan")
        stage = tuple(float(c) for c in sub.mean(axis=0)) if n else tuple(float("nan") for _ in range(test.n_stages))
        entries.append(SliceEntry(label, n, e2e, stage))
    base = evaluate_coverage(test, thresholds)
    return replace(base, slices=tuple(entries), slice_name=slice.name)


def aggregate_reports(reports: Sequence[CoverageReport]) -> CoverageReport:
    """Mean over seeds with population std in ``e2e_std`` / ``avg_set_size_std``."""
    if not reports:
        raise ValueError("nothing to aggregate")
    e2e = np.array([r.e2e_coverage for r in reports])
    stage = np.array([r.stage_coverage for r in reports]).mean(axis=0)
    sizes = [r.avg_set_size for r in reports if r.avg_set_size is not None]
    return CoverageReport(
        e2e_coverage=float(e2e.mean()),
        stage_coverage=tuple(float(s) for s in stage),
        n_samples=int(sum(r.n_samples for r in reports)),
        method=reports[0].method,
        avg_set_size=float(np.mean(sizes)) if sizes else None,
        seeds=len(reports),
        e2e_std=float(e2e.std()),
        avg_set_size_std=float(np.std(sizes)) if sizes else None,
    )


@dataclass(frozen=True)
class ScorePool:
    """A fixed score file to draw calibration/test rows from."""

    matrix: ScoreMatrix
    candidates: PredictionCandidates | None = None

    def take(self, rows) -> tuple[ScoreMatrix, PredictionCandidates | None]:
        c = None if self.candidates is None else self.candidates.take(rows)
        return self.matrix.take(rows), c


Source = ScorePool | SyntheticSpec


@dataclass(frozen=True)
class SweepCell:
    alpha: float
    n_cal: int
    method: Method
    e2e_mean: float
    e2e_std: float
    avg_set_size_mean: float | None
    avg_set_size_std: float | None
    per_seed_e2e: tuple[float, ...]

    @property
    def key(self) -> tuple[float, int, Method]:
        return (self.alpha, self.n_cal, self.method)


@dataclass(frozen=True)
class SweepReport:
    seeds: tuple[int, ...]
    n_test: int | None
    cells: tuple[SweepCell, ...]

    def cell(self, alpha: float, n_cal: int, method: Method | str) -> SweepCell:
        key = (float(alpha), int(n_cal), Method(method))
        matches = [c for c in self.cells if c.key == key]
        if len(matches) != 1:
            raise KeyError(key)
        return matches[0]


def _draw(cal_source: Source, test_source: Source | None, seed: int, n_cal: int, n_test: int | None, n_tune: int):
    """Calibration, test and (optional) tuning draws for one seed, pairwise disjoint."""
    if isinstance(cal_source, SyntheticSpec):
        cal = generate(replace(cal_source, n_samples=n_cal), seed, ROLE_CAL), None
        tune = (generate(replace(cal_source, n_samples=n_tune), seed, ROLE_TUNE), None) if n_tune else None
    else:
        rng = derive_rng(seed, ROLE_CAL)
        pool_n = cal_source.matrix.n_samples
        order = rng.permutation(pool_n)
        same = test_source is None or test_source is cal_source
        need = n_cal + n_tune + ((n_test or 1) if same else 0)
        if need > pool_n:
            raise ValueError(f"pool of {pool_n} rows cannot supply {need} disjoint rows")
        cal = cal_source.take(order[:n_cal])
        tune = cal_source.take(order[n_cal:n_cal + n_tune]) if n_tune else None
        if same:
            rest = order[n_cal + n_tune:]
            test = cal_source.take(rest if n_test is None else rest[:n_test])
            return cal, test, tune
    if test_source is None:
        test_source = cal_source
    if isinstance(test_source, SyntheticSpec):
        test = generate(replace(test_source, n_samples=n_test or 1000), seed, ROLE_TEST), None
    else:
        rows = np.arange(test_source.matrix.n_samples)
        if n_test is not None:
            rows = derive_rng(seed, ROLE_TEST).permutation(rows)[:n_test]
        test = test_source.take(rows)
    return cal, test, tune


def run_sweep(
    cal_source: Source,
    test_source: Source | None,
    alphas: Sequence[float],
    n_cals: Sequence[int],
    methods: Sequence[Method | str],
    seeds: Sequence[int],
    n_test: int | None = None,
    tuned: dict | None = None,
    n_tune: int = 0,
) -> SweepReport:
    """Grid over alpha x n_cal x method, averaged over seeds.

    With a single pool (``test_source`` None or the same pool) every seed
    reshuffles it and takes disjoint calibration / tuning / test rows.
    With two pools the test pool is used whole, or subsampled to
    ``n_test``; thresholds learned on one pool then score the other,
    which is how distribution shift is evaluated. ``tuned`` holds extra
    :class:`TunedSearchSpec` fields and requires ``n_tune > 0``.
    """
    methods = [Method(m) for m in methods]
    if not seeds:
        raise ValueError("at least one seed is required")
    for name, values in (("alphas", [float(a) for a in alphas]), ("n_cals", list(n_cals)),
                         ("methods", methods), ("seeds", list(seeds))):
        if len(set(values)) != len(values):
            raise ValueError(f"duplicate entries in {name}: {list(values)}")
    if Method.TUNED_BONFERRONI in methods and n_tune <= 0:
        raise ValueError("tuned_bonferroni in a sweep needs n_tune > 0")
    tune_n = n_tune if Method.TUNED_BONFERRONI in methods else 0
    results: dict[tuple, list[CoverageReport]] = {}
    for n_cal in n_cals:
        for seed in seeds:
            (cal, _), (test, test_c), tune = _draw(cal_source, test_source, seed, n_cal, n_test, tune_n)
            for alpha in alphas:
                for m in methods:
                    spec = None
                    if m is Method.TUNED_BONFERRONI:
                        spec = TunedSearchSpec(tuning_matrix=tune[0], candidates=tune[1], **(tuned or {}))
                    tv = calibrate(cal, alpha, m, spec)
                    results.setdefault((float(alpha), int(n_cal), m), []).append(evaluate_coverage(test, tv, test_c))
    cells = []
    for n_cal in n_cals:
        for alpha in alphas:
            for m in methods:
                reps = results[(float(alpha), int(n_cal), m)]
                agg = aggregate_reports(reps)
                cells.append(SweepCell(
                    float(alpha), int(n_cal), m, agg.e2e_coverage, agg.e2e_std,
                    agg.avg_set_size, agg.avg_set_size_std, tuple(r.e2e_coverage for r in reps),
                ))
    return SweepReport(tuple(int(s) for s in seeds), n_test, tuple(cells))


@dataclass(frozen=True)
class CostRecord:
    method: Method
    n_quantiles: int
    seconds: float


def calibration_cost(matrix, method: Method | str, alpha: float = 0.1, tuning: TunedSearchSpec | None = None, repeats: int = 1) -> CostRecord:
    """Quantile computations and best-of-``repeats`` wall-clock of one calibration call."""
    matrix = as_score_matrix(matrix)
    best = float("inf")
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        tv = calibrate(matrix, alpha, method, tuning)
        best = min(best, time.perf_counter() - t0)
    return CostRecord(Method(method), tv.n_quantiles, best)

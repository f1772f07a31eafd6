"""Validity checks: permutation re-splits, mismatched-score control and audits."""

from __future__ import annotations

import hashlib
import operator
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Method, ThresholdVector, _finite_1d, _order_statistic, as_score_matrix, check_alpha
from .synthetic import derive_rng


@dataclass(frozen=True)
class PermutationResult:
    actual_coverage: float
    permutation_mean: float
    permutation_std: float
    n_permutations: int
    alpha: float
    permutation_coverages: tuple[float, ...] = ()
    negative_control: float | None = None


@dataclass(frozen=True)
class PermutationReport:
    """Permutation results at several alpha levels for one stage."""

    stage: int
    control_stage: int | None
    seed: int
    results: tuple[PermutationResult, ...]


def permutation_test(cal_scores, test_scores, alpha: float, n_permutations: int = 200, seed: int = 0) -> PermutationResult:
    """Coverage on the given split against coverage over random re-splits.

    The pooled scores are reshuffled ``n_permutations`` times, keeping the
    original calibration and test sizes. Permutation ``j`` uses stream
    ``(seed, j)``.
    """
    cal = _finite_1d(cal_scores)
    test = _finite_1d(test_scores)
    alpha = check_alpha(alpha)
    if n_permutations < 2:
        raise ValueError("n_permutations must be >= 2")
    actual = float(np.mean(test <= _order_statistic(cal, alpha)))
    pool = np.concatenate([cal, test])
    n = cal.size
    covs = []
    for j in range(n_permutations):
        perm = derive_rng(seed, j).permutation(pool)
        q = _order_statistic(perm[:n], alpha)
        covs.append(float(np.mean(perm[n:] <= q)))
    arr = np.asarray(covs)
    return PermutationResult(actual, float(arr.mean()), float(arr.std()), n_permutations, alpha, tuple(covs))


def negative_control(cal, test, calibrate_stage: int, evaluate_stage: int, alpha: float) -> float:
    """Coverage at ``evaluate_stage`` when its threshold is fitted on ``calibrate_stage`` scores."""
    cal, test = as_score_matrix(cal), as_score_matrix(test)
    for name, idx, m in (("calibrate_stage", calibrate_stage, cal), ("evaluate_stage", evaluate_stage, test)):
        if not 0 <= idx < m.n_stages:
            raise ValueError(f"{name}={idx} out of range for {m.n_stages} stages")
    q = _order_statistic(cal.column(calibrate_stage), check_alpha(alpha))
    return float(np.mean(test.column(evaluate_stage) <= q))


def normalize_tokens(text: str) -> tuple[str, ...]:
    return tuple(text.split())


def token_hash(tokens: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(tokens).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class DuplicateGroup:
    content_hash: str
    text: str
    token_count: int
    members: tuple[tuple[str, tuple[str, ...]], ...]
    trivial: bool


@dataclass(frozen=True)
class AuditResult:
    groups: tuple[DuplicateGroup, ...]
    n_cross_split: int
    trivial_flagged: int
    trivial_token_threshold: int
    split_sizes: tuple[tuple[str, int], ...]

    @property
    def substantive(self) -> int:
        return self.n_cross_split - self.trivial_flagged


def split_audit(splits: Mapping[str, Sequence[str] | Mapping[str, str]], trivial_token_threshold: int = 4) -> AuditResult:
    """Exact duplicate records across splits, by hash of whitespace tokens.

    Each split is either a sequence of texts (ids are positions) or a
    mapping of id to text. Groups whose token count is at most
    ``trivial_token_threshold`` are flagged as trivial.
    """
    if len(splits) < 2:
        raise ValueError("split audit needs at least two splits")
    index: dict[str, dict[str, list[str]]] = {}
    tokens_of: dict[str, tuple[str, ...]] = {}
    sizes = []
    for name, records in splits.items():
        items = records.items() if isinstance(records, Mapping) else ((str(i), t) for i, t in enumerate(records))
        count = 0
        for rid, text in items:
            toks = normalize_tokens(text)
            h = token_hash(toks)
            tokens_of[h] = toks
            index.setdefault(h, {}).setdefault(name, []).append(str(rid))
            count += 1
        sizes.append((name, count))
    groups = []
    for h in sorted(index):
        members = index[h]
        if len(members) < 2:
            continue
        toks = tokens_of[h]
        groups.append(DuplicateGroup(
            h, " ".join(toks), len(toks),
            tuple((name, tuple(ids)) for name, ids in sorted(members.items())),
            len(toks) <= trivial_token_threshold,
        ))
    return AuditResult(
        tuple(groups), len(groups), sum(g.trivial for g in groups), trivial_token_threshold, tuple(sizes)
    )


def _stagewise_covered(row, thresholds) -> bool:
    return all(operator.le(s, q) for s, q in zip(row, thresholds))


def _max_covered(row, qhat) -> bool:
    return bool(np.max(np.asarray(row)) <= qhat)


@dataclass(frozen=True)
class TraceEntry:
    row: int
    sample_id: str | None
    scores: tuple[float, ...]
    threshold: float
    all_stages_covered: bool
    max_score_covered: bool

    @property
    def matched(self) -> bool:
        return self.all_stages_covered == self.max_score_covered


@dataclass(frozen=True)
class E2EAuditResult:
    passed: bool
    n_traced: int
    mismatches: tuple[TraceEntry, ...]
    trace: tuple[TraceEntry, ...]


def e2e_definition_audit(
    test,
    thresholds: ThresholdVector,
    n_samples_traced: int = 200,
    seed: int = 0,
    stagewise_check: Callable = _stagewise_covered,
    max_check: Callable = _max_covered,
) -> E2EAuditResult:
    """Trace random test rows through two independent acceptance paths.

    One path compares every stage score with its threshold; the other
    compares the row maximum with the shared threshold. Both checks are
    injectable so a deliberately broken comparison can be shown to fail.
    """
    if thresholds.method is not Method.PASC:
        raise ValueError(f"e2e audit expects pasc thresholds, got {thresholds.method.value}")
    test = as_score_matrix(test)
    if test.n_stages != thresholds.n_stages:
        raise ValueError(f"test matrix has {test.n_stages} stages, thresholds have {thresholds.n_stages}")
    if n_samples_traced > test.n_samples:
        raise ValueError(f"cannot trace {n_samples_traced} rows from {test.n_samples}")
    rows = derive_rng(seed).choice(test.n_samples, size=n_samples_traced, replace=False) if n_samples_traced else []
    qhat = thresholds.thresholds[0]
    trace = []
    for i in rows:
        row = tuple(float(s) for s in test.scores[i])
        trace.append(TraceEntry(
            int(i), None if test.sample_ids is None else test.sample_ids[i], row, qhat,
            bool(stagewise_check(row, thresholds.thresholds)), bool(max_check(row, qhat)),
        ))
    bad = tuple(t for t in trace if not t.matched)
    return E2EAuditResult(not bad, len(trace), bad, tuple(trace))

"""Synthetic K-stage score generators and the stage-scaling experiment.

Seeding rule: every random stream is ``default_rng(SeedSequence(root, spawn_key=keys))``
where ``root`` is the experiment seed and ``keys`` are small integers
(trial index, then a role: 0 calibration, 1 test, 2 tuning). Any single
trial can therefore be regenerated on its own.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .calibrators import calibrate
from .core import Method, ScoreMatrix, check_alpha

ROLE_CAL, ROLE_TEST, ROLE_TUNE = 0, 1, 2


def derive_rng(root: int, *keys: int) -> np.random.Generator:
    # keys go in as a spawn key rather than extra entropy words: trailing zero
    # entropy words are absorbed, so [root] and [root, 0] would share a stream
    return np.random.default_rng(np.random.SeedSequence(int(root), spawn_key=tuple(map(int, keys))))


class MarginalKind(str, enum.Enum):
    UNIFORM01 = "uniform01"
    BETA = "beta"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class Marginal:
    kind: MarginalKind = MarginalKind.UNIFORM01
    a: float | None = None
    b: float | None = None
    source: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MarginalKind(self.kind))
        if self.kind is MarginalKind.BETA:
            if self.a is None or self.b is None or self.a <= 0 or self.b <= 0:
                raise ValueError("beta marginal needs positive a and b")
        if self.kind is MarginalKind.EMPIRICAL:
            if not self.source:
                raise ValueError("empirical marginal needs a non-empty source column")
            src = tuple(float(x) for x in self.source)
            if not all(math.isfinite(x) for x in src):
                raise ValueError("empirical source contains non-finite values")
            object.__setattr__(self, "source", src)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        if self.kind is MarginalKind.UNIFORM01:
            return u
        if self.kind is MarginalKind.BETA:
            return stats.beta.ppf(u, self.a, self.b)
        return np.quantile(np.asarray(self.source), u, method="inverted_cdf")

    def cdf(self, x: np.ndarray) -> np.ndarray:
        if self.kind is MarginalKind.UNIFORM01:
            return np.clip(x, 0.0, 1.0)
        if self.kind is MarginalKind.BETA:
            return stats.beta.cdf(x, self.a, self.b)
        src = np.sort(np.asarray(self.source))
        return np.searchsorted(src, x, side="right") / src.size

    @classmethod
    def uniform(cls):
        return cls(MarginalKind.UNIFORM01)

    @classmethod
    def beta(cls, a: float, b: float):
        return cls(MarginalKind.BETA, a=a, b=b)

    @classmethod
    def empirical(cls, column: Sequence[float]):
        return cls(MarginalKind.EMPIRICAL, source=tuple(np.asarray(column, dtype=float)))


class DependenceKind(str, enum.Enum):
    INDEPENDENT = "independent"
    GAUSSIAN_COPULA = "gaussian_copula"
    COMONOTONE = "comonotone"


def equicorrelation(n_stages: int, rho: float) -> np.ndarray:
    c = np.full((n_stages, n_stages), float(rho))
    np.fill_diagonal(c, 1.0)
    return c


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings for i.i.d. K-stage score rows.

    ``marginals`` holds one entry per stage or a shorter list that is
    cycled. For the Gaussian copula give either a full ``correlation``
    matrix or a scalar ``rho`` (equicorrelated stages).
    """

    n_stages: int
    n_samples: int
    seed: int = 0
    marginals: tuple[Marginal, ...] = (Marginal(),)
    dependence: DependenceKind = DependenceKind.INDEPENDENT
    rho: float | None = None
    correlation: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.marginals:
            raise ValueError("at least one marginal is required")
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "dependence", DependenceKind(self.dependence))
        if self.correlation is not None:
            object.__setattr__(self, "correlation", tuple(tuple(float(x) for x in r) for r in self.correlation))
        if self.dependence is DependenceKind.GAUSSIAN_COPULA:
            self.correlation_matrix()  # validates

    def marginal(self, k: int) -> Marginal:
        return self.marginals[k % len(self.marginals)]

    def correlation_matrix(self) -> np.ndarray:
        K = self.n_stages
        if self.correlation is not None:
            c = np.asarray(self.correlation, dtype=float)
        elif self.rho is not None:
            c = equicorrelation(K, self.rho)
        else:
            c = np.eye(K)
        if c.shape != (K, K):
            raise ValueError(f"correlation matrix must be {K}x{K}, got {c.shape}")
        if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric with unit diagonal")
        if np.linalg.eigvalsh(c).min() < -1e-8:
            raise ValueError("correlation matrix is not positive semidefinite")
        return c

    def with_stages(self, n_stages: int) -> SyntheticSpec:
        """Same generator at a different stage count (explicit correlation matrices cannot be resized)."""
        if n_stages == self.n_stages:
            return self
        if self.correlation is not None:
            raise ValueError("cannot resize an explicit correlation matrix; use rho")
        return replace(self, n_stages=n_stages)


def _copula_factor(c: np.ndarray) -> np.ndarray:
    # eigen factorisation tolerates singular (e.g. rho = 1) matrices
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0.0, None))


def generate(spec: SyntheticSpec, *keys: int) -> ScoreMatrix:
    """Draw ``spec.n_samples`` i.i.d. rows. Extra ``keys`` select a derived stream."""
    rng = derive_rng(spec.seed, *keys)
    n, K = spec.n_samples, spec.n_stages
    if spec.dependence is DependenceKind.INDEPENDENT:
        u = rng.random((n, K))
    elif spec.dependence is DependenceKind.COMONOTONE:
        u = np.repeat(rng.random((n, 1)), K, axis=1)
    else:
        z = rng.standard_normal((n, K)) @ _copula_factor(spec.correlation_matrix()).T
        u = stats.norm.cdf(z)
    cols = [spec.marginal(k).ppf(u[:, k]) for k in range(K)]
    return ScoreMatrix(np.column_stack(cols))


class ShiftKind(str, enum.Enum):
    NONE = "none"
    LOCATION = "location"
    SCALE = "scale"


@dataclass(frozen=True)
class ShiftSpec:
    """Score-level shift applied to test data only."""

    kind: ShiftKind = ShiftKind.NONE
    values: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ShiftKind(self.kind))
        vals = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("shift values must be finite")
        if self.kind is ShiftKind.SCALE and any(v <= 0 for v in vals):
            raise ValueError("scale factors must be positive")
        if self.kind is not ShiftKind.NONE and not vals:
            raise ValueError(f"{self.kind.value} shift needs per-stage values")
        object.__setattr__(self, "values", vals)

    def per_stage(self, n_stages: int) -> np.ndarray:
        """Values broadcast to ``n_stages``; a single value applies to every stage."""
        if len(self.values) == 1:
            return np.full(n_stages, self.values[0])
        if len(self.values) != n_stages:
            raise ValueError(f"shift has {len(self.values)} values for {n_stages} stages")
        return np.asarray(self.values)

    @classmethod
    def parse(cls, text: str) -> ShiftSpec:
        """``none``, ``location:D1,D2,...`` or ``scale:F1,F2,...``."""
        kind, _, rest = text.strip().partition(":")
        if kind == "none":
            return cls()
        return cls(ShiftKind(kind), tuple(float(v) for v in rest.split(",") if v.strip()))

    def describe(self) -> str:
        if self.kind is ShiftKind.NONE:
            return "none"
        return f"{self.kind.value}:" + ",".join(repr(v) for v in self.values)


NO_SHIFT = ShiftSpec()


def apply_shift(matrix: ScoreMatrix, shift: ShiftSpec) -> ScoreMatrix:
    """Shift or rescale test scores per stage. No clipping to [0, 1]."""
    if shift.kind is ShiftKind.NONE:
        return matrix
    v = shift.per_stage(matrix.n_stages)
    out = matrix.scores + v if shift.kind is ShiftKind.LOCATION else matrix.scores * v
    return ScoreMatrix(out, matrix.sample_ids)


def analytic_joint_coverage(alpha: float, k: int) -> float:
    """``(1 - alpha) ** k``: joint coverage of k independent stages each at 1 - alpha."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return (1.0 - check_alpha(alpha)) ** k


SCALING_METHODS = (Method.INDEPENDENT, Method.BONFERRONI, Method.PASC)


@dataclass(frozen=True)
class ScalingCell:
    k: int
    method: Method
    mean: float
    std: float
    per_trial: tuple[float, ...]


@dataclass(frozen=True)
class ScalingReport:
    alpha: float
    n_cal: int
    n_test: int
    trials: int
    seed: int
    k_range: tuple[int, ...]
    analytic: tuple[float, ...]
    cells: tuple[ScalingCell, ...]
    shift: ShiftSpec = field(default_factory=ShiftSpec)

    def cell(self, k: int, method: Method | str) -> ScalingCell:
        method = Method(method)
        return next(c for c in self.cells if c.k == k and c.method is method)


def e2e_coverage(test: np.ndarray, thresholds) -> float:
    return float(np.mean(np.all(test <= np.asarray(thresholds), axis=1)))


def run_scaling_experiment(
    base: SyntheticSpec,
    k_range: Sequence[int],
    alpha: float,
    n_cal: int,
    n_test: int,
    trials: int,
    shift: ShiftSpec = NO_SHIFT,
    methods: Sequence[Method | str] = SCALING_METHODS,
) -> ScalingReport:
    """Monte Carlo joint coverage of each calibrator as the stage count grows.

    Trial ``t`` at stage count ``K`` draws its calibration and test rows
    from streams ``(base.seed, K, t, role)``.
    """
    alpha = check_alpha(alpha)
    if min(n_cal, n_test, trials) < 1 or not k_range:
        raise ValueError("n_cal, n_test, trials must be positive and k_range non-empty")
    methods = [Method(m) for m in methods]
    cells = []
    for K in k_range:
        spec_k = base.with_stages(K)
        cov = {m: [] for m in methods}
        for t in range(trials):
            cal = generate(replace(spec_k, n_samples=n_cal), K, t, ROLE_CAL)
            test = apply_shift(generate(replace(spec_k, n_samples=n_test), K, t, ROLE_TEST), shift)
            for m in methods:
                tv = calibrate(cal, alpha, m)
                cov[m].append(e2e_coverage(test.scores, tv.thresholds))
        for m in methods:
            arr = np.asarray(cov[m])
            cells.append(ScalingCell(K, m, float(arr.mean()), float(arr.std()), tuple(cov[m])))
    return ScalingReport(
        alpha, n_cal, n_test, trials, int(base.seed), tuple(int(k) for k in k_range),
        tuple(analytic_joint_coverage(alpha, K) for K in k_range), tuple(cells), shift,
    )


@dataclass(frozen=True)
class ShiftCell:
    condition: str
    shift: ShiftSpec
    method: Method
    mean: float
    std: float
    per_trial: tuple[float, ...]


@dataclass(frozen=True)
class ShiftReport:
    alpha: float
    n_stages: int
    n_cal: int
    n_test: int
    trials: int
    seed: int
    cells: tuple[ShiftCell, ...]

    def cell(self, condition: str, method: Method | str) -> ShiftCell:
        method = Method(method)
        return next(c for c in self.cells if c.condition == condition and c.method is method)


def run_shift_study(
    base: SyntheticSpec,
    shifts: dict[str, ShiftSpec],
    alpha: float,
    n_cal: int,
    n_test: int,
    trials: int,
    methods: Sequence[Method | str] = SCALING_METHODS,
) -> ShiftReport:
    """Calibrate on clean data, evaluate on shifted test data, per condition.

    Every condition reuses the same calibration and pre-shift test draws
    (streams ``(base.seed, t, role)``), so conditions differ only by the shift.
    """
    alpha = check_alpha(alpha)
    methods = [Method(m) for m in methods]
    cov = {(label, m): [] for label in shifts for m in methods}
    for t in range(trials):
        cal = generate(replace(base, n_samples=n_cal), t, ROLE_CAL)
        clean = generate(replace(base, n_samples=n_test), t, ROLE_TEST)
        tvs = {m: calibrate(cal, alpha, m) for m in methods}
        for label, shift in shifts.items():
            test = apply_shift(clean, shift).scores
            for m in methods:
                cov[(label, m)].append(e2e_coverage(test, tvs[m].thresholds))
    cells = []
    for label, shift in shifts.items():
        for m in methods:
            arr = np.asarray(cov[(label, m)])
            cells.append(ShiftCell(label, shift, m, float(arr.mean()), float(arr.std()), tuple(cov[(label, m)])))
    return ShiftReport(alpha, base.n_stages, n_cal, n_test, trials, int(base.seed), tuple(cells))

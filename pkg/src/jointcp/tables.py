"""Plain-text, pipe-delimited tables for every report type (three decimals)."""

from __future__ import annotations

import math
from functools import singledispatch

from .core import Method, ThresholdVector
from .diagnostics import AuditResult, E2EAuditResult, PermutationReport
from .evaluation import CoverageReport, MethodComparison, SweepReport
from .synthetic import ScalingReport, ShiftReport

METHOD_NAMES = {
    Method.INDEPENDENT: "Indep CP",
    Method.BONFERRONI: "Bonferroni",
    Method.TUNED_BONFERRONI: "Tuned Bonferroni",
    Method.PASC: "PASC",
}
GUARANTEE = {Method.INDEPENDENT: "No", Method.BONFERRONI: "Yes", Method.TUNED_BONFERRONI: "Yes", Method.PASC: "Yes"}


def fmt(x, digits: int = 3) -> str:
    if x is None:
        return "---"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.{digits}f}"
    return str(x)


def pm(mean, std) -> str:
    if mean is None:
        return "---"
    return fmt(mean) if std is None else f"{fmt(mean)} ± {fmt(std)}"


def table(header: list[str], rows: list[list[str]]) -> str:
    cells = [header] + rows
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]

    def line(r):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"

    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def method_name(m) -> str:
    return METHOD_NAMES.get(m, str(m))


@singledispatch
def render(report) -> str:
    raise TypeError(f"no table layout for {type(report).__name__}")


@render.register
def _(tv: ThresholdVector) -> str:
    head = f"method={tv.method.value} alpha={fmt(tv.alpha)} n_cal={tv.n_cal} quantiles={tv.n_quantiles}"
    rows = [
        [str(k), fmt(q), fmt(tv.allocation[k], 4) if tv.allocation else "---"]
        for k, q in enumerate(tv.thresholds)
    ]
    return head + "\n\n" + table(["Stage", "Threshold", "Stage alpha"], rows) + "\n"


def _slice_table(reports: list[CoverageReport]) -> str:
    first = reports[0]
    header = ["Slice", "n"] + [method_name(r.method) for r in reports]
    rows = []
    for j, entry in enumerate(first.slices):
        rows.append([entry.label, str(entry.n)] + [fmt(r.slices[j].e2e_coverage) for r in reports])
    return f"E2E coverage by {first.slice_name}\n\n" + table(header, rows)


@render.register
def _(cmp: MethodComparison) -> str:
    K = len(cmp.reports[0].stage_coverage)
    header = ["Method", "E2E Cov.", "Avg Set Size", "Guarantee?"] + [f"Stage {k} Cov." for k in range(K)]
    rows = [
        [method_name(r.method), pm(r.e2e_coverage, r.e2e_std), pm(r.avg_set_size, r.avg_set_size_std),
         GUARANTEE.get(r.method, "---")] + [fmt(c) for c in r.stage_coverage]
        for r in cmp.reports
    ]
    out = (cmp.label + "\n\n" if cmp.label else "") + table(header, rows) + "\n"
    if cmp.reports[0].slices:
        out += "\n" + _slice_table(list(cmp.reports)) + "\n"
    return out


@render.register
def _(sw: SweepReport) -> str:
    rows = [
        [fmt(c.alpha, 2), str(c.n_cal), method_name(c.method), pm(c.e2e_mean, c.e2e_std),
         pm(c.avg_set_size_mean, c.avg_set_size_std)]
        for c in sw.cells
    ]
    head = f"{len(sw.seeds)} seeds: {', '.join(map(str, sw.seeds))}"
    return head + "\n\n" + table(["alpha", "n_cal", "Method", "E2E Cov.", "Avg Set Size"], rows) + "\n"


@render.register
def _(sc: ScalingReport) -> str:
    methods = list(dict.fromkeys(c.method for c in sc.cells))
    header = ["K", "(1-alpha)^K"] + [method_name(m) for m in methods]
    rows = []
    for k, analytic in zip(sc.k_range, sc.analytic):
        rows.append([str(k), fmt(analytic)] + [pm(sc.cell(k, m).mean, sc.cell(k, m).std) for m in methods])
    head = (f"alpha={fmt(sc.alpha)} n_cal={sc.n_cal} n_test={sc.n_test} trials={sc.trials} "
            f"seed={sc.seed} test shift={sc.shift.describe()}")
    return head + "\n\n" + table(header, rows) + "\n"


@render.register
def _(sh: ShiftReport) -> str:
    methods = list(dict.fromkeys(c.method for c in sh.cells))
    conditions = list(dict.fromkeys(c.condition for c in sh.cells))
    header = ["Condition", "Shift"] + [method_name(m) for m in methods]
    rows = []
    for cond in conditions:
        cells = [sh.cell(cond, m) for m in methods]
        rows.append([cond, cells[0].shift.describe()] + [pm(c.mean, c.std) for c in cells])
    head = f"alpha={fmt(sh.alpha)} K={sh.n_stages} n_cal={sh.n_cal} n_test={sh.n_test} trials={sh.trials}"
    return head + "\n\n" + table(header, rows) + "\n"


@render.register
def _(pr: PermutationReport) -> str:
    rows = [
        [fmt(r.alpha, 2), str(pr.stage), fmt(r.actual_coverage), fmt(r.permutation_mean),
         fmt(r.permutation_std), fmt(r.negative_control)]
        for r in pr.results
    ]
    header = ["alpha", "Stage", "Actual Cov", "Perm Mean", "Perm Std", "Neg Control"]
    n = pr.results[0].n_permutations if pr.results else 0
    head = f"{n} re-splits, seed={pr.seed}, control calibrated on stage {fmt(pr.control_stage)}"
    return head + "\n\n" + table(header, rows) + "\n"


@render.register
def _(au: AuditResult) -> str:
    rows = [
        [g.content_hash[:12], g.text if len(g.text) <= 40 else g.text[:37] + "...", str(g.token_count),
         "; ".join(f"{s}:{','.join(ids)}" for s, ids in g.members), "yes" if g.trivial else "no"]
        for g in au.groups
    ]
    head = (f"{au.n_cross_split} cross-split duplicate groups, {au.trivial_flagged} trivial "
            f"(<= {au.trivial_token_threshold} tokens), {au.substantive} substantive")
    if not rows:
        return head + "\n"
    return head + "\n\n" + table(["Hash", "Text", "Tokens", "Members", "Trivial"], rows) + "\n"


@render.register
def _(ea: E2EAuditResult) -> str:
    status = "PASS" if ea.passed else "FAIL"
    head = f"{status}: {ea.n_traced} traced, {len(ea.mismatches)} mismatches"
    if not ea.mismatches:
        return head + "\n"
    rows = [
        [str(t.row), fmt(t.sample_id), ", ".join(fmt(s, 6) for s in t.scores), fmt(t.threshold, 6),
         str(t.all_stages_covered), str(t.max_score_covered)]
        for t in ea.mismatches
    ]
    return head + "\n\n" + table(["Row", "Sample", "Scores", "Threshold", "All stages", "Max"], rows) + "\n"

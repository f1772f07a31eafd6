"""Command-line entry point: ``jointcp <subcommand> ...``.

Exit status: 0 on success, 1 when an internal validity check fails (e.g.
the E2E definition audit), 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .calibrators import Objective, TunedSearchSpec, calibrate
from .core import Method
from .diagnostics import (
    PermutationReport,
    e2e_definition_audit,
    negative_control,
    permutation_test,
    split_audit,
)
from .evaluation import MethodComparison, ScorePool, SliceSpec, evaluate_coverage, run_sweep, slice_report
from .io import (
    SchemaError,
    ScoreFile,
    load_config,
    load_prob_tables,
    load_scores,
    load_text_split,
    read_document,
    write_report,
)
from .synthetic import (
    NO_SHIFT,
    DependenceKind,
    Marginal,
    ShiftSpec,
    SyntheticSpec,
    apply_shift,
    run_scaling_experiment,
    run_shift_study,
)

DEFAULT_ALPHA = 0.1
DEFAULT_N_CAL = 1000
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_PERMUTATIONS = 200
FORMATS = ("structured", "human_table")


class ValidityFailure(Exception):
    """An internal validity assertion did not hold."""


def load_any(path) -> ScoreFile:
    """Load a score file or a probability-table file, chosen by its header."""
    try:
        with open(path, encoding="utf-8") as fh:
            first = next((line for line in fh if line.strip()), "")
    except OSError as e:
        raise SchemaError(f"{path}: {e.strerror or e}") from e
    try:
        kind = json.loads(first).get("kind", "scores") if first else "scores"
    except (json.JSONDecodeError, AttributeError):
        kind = "scores"
    return load_prob_tables(path) if kind == "prob_tables" else load_scores(path)


def _echo_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "parser") and v is not None}


def _emit(report, args, config=None):
    write_report(report, args.out, args.format, _echo_config(args) if config is None else config)


def _parse_marginal(text: str) -> Marginal:
    kind, _, rest = text.partition(":")
    if kind == "uniform01":
        return Marginal.uniform()
    if kind == "beta":
        a, b = (float(v) for v in rest.split(","))
        return Marginal.beta(a, b)
    raise ValueError(f"bad marginal {text!r}; use uniform01 or beta:A,B")


def _named(items, what: str) -> dict[str, str]:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ValueError(f"{what} must look like NAME=VALUE, got {item!r}")
        out[name] = value
    return out


# -- subcommands -----------------------------------------------------------


def cmd_calibrate(args) -> int:
    method = Method(args.method)
    if method is Method.TUNED_BONFERRONI and not args.tuning:
        args.parser.error("--method tuned_bonferroni requires --tuning")
    cal = load_any(args.cal)
    spec = None
    if method is Method.TUNED_BONFERRONI:
        tune = load_any(args.tuning)
        spec = TunedSearchSpec(
            tuning_matrix=tune.matrix, grid_step=args.grid_step, min_per_stage=args.min_per_stage,
            objective=Objective(args.objective), candidates=tune.candidates,
        )
    tv = calibrate(cal.matrix, args.alpha, method, spec)
    _emit(tv, args)
    alloc = "none" if tv.allocation is None else ",".join(f"{a:.6g}" for a in tv.allocation)
    print(f"method={tv.method.value} n_cal={tv.n_cal} quantiles={tv.n_quantiles} allocation={alloc} "
          f"thresholds={','.join(repr(q) for q in tv.thresholds)}")
    return 0


def cmd_evaluate(args) -> int:
    data = load_any(args.test)
    shift = ShiftSpec.parse(args.shift)
    test = apply_shift(data.matrix, shift)
    slicer = SliceSpec.parse(args.slice) if args.slice else None
    reports = []
    for path in args.thresholds:
        doc = read_document(path)
        if doc.kind != "thresholds":
            raise SchemaError(f"{path}: expected a thresholds document, got {doc.kind!r}")
        tv = doc.report
        if slicer is None:
            rep = evaluate_coverage(test, tv, data.candidates)
        else:
            groups = data.groups(slicer.field) if slicer.field else None
            rep = slice_report(test, tv, slicer, groups)
            if data.candidates is not None:
                base = evaluate_coverage(test, tv, data.candidates)
                rep = replace(rep, avg_set_size=base.avg_set_size, set_coverage=base.set_coverage)
        reports.append(rep)
    label = f"test={Path(args.test).name} shift={shift.describe()}"
    _emit(MethodComparison(tuple(reports), label), args)
    return 0


def _sweep_sources(args, cfg):
    if cfg is not None and cfg.synthetic is not None:
        return cfg.synthetic, None, None
    cal_path = args.cal or (cfg.cal if cfg else None)
    if cal_path:
        cal = load_any(cal_path)
        test_path = args.test or (cfg.test if cfg else None)
        test = load_any(test_path) if test_path else None
        return (ScorePool(cal.matrix, cal.candidates),
                None if test is None else ScorePool(test.matrix, test.candidates), None)
    return SyntheticSpec(n_stages=args.stages, n_samples=1, seed=args.seed,
                         marginals=(_parse_marginal(args.marginal),),
                         dependence=DependenceKind(args.dependence), rho=args.rho), None, None


def cmd_sweep(args) -> int:
    cfg = load_config(args.config) if args.config else None
    cal_src, test_src, _ = _sweep_sources(args, cfg)
    alphas = args.alphas or (cfg.alphas if cfg else (DEFAULT_ALPHA,))
    n_cals = args.n_cal or (cfg.n_cals if cfg else (DEFAULT_N_CAL,))
    methods = args.methods or (cfg.methods if cfg else ("independent", "bonferroni", "pasc"))
    seeds = args.seeds or (cfg.seeds if cfg else DEFAULT_SEEDS)
    n_test = args.n_test if args.n_test is not None else (cfg.n_test if cfg else None)
    n_tune = args.n_tune if args.n_tune is not None else (cfg.n_tune if cfg else 0)
    tuned = {"grid_step": args.grid_step, "objective": Objective(args.objective)}
    if isinstance(cal_src, SyntheticSpec) and n_test is None:
        n_test = 1000
    report = run_sweep(cal_src, test_src, alphas, n_cals, methods, seeds, n_test=n_test, tuned=tuned, n_tune=n_tune)
    _emit(report, args)
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if cfg is not None and cfg.synthetic is not None:
        base = cfg.synthetic
    else:
        base = SyntheticSpec(n_stages=args.stages, n_samples=1, seed=args.seed,
                             marginals=(_parse_marginal(args.marginal),),
                             dependence=DependenceKind(args.dependence), rho=args.rho)
    k_range = tuple(args.k_range) if args.k_range else (cfg.k_range if cfg else tuple(range(1, 7)))
    alpha = args.alpha if args.alpha is not None else (cfg.alphas[0] if cfg else DEFAULT_ALPHA)
    n_cal = args.n_cal if args.n_cal is not None else (cfg.n_cals[0] if cfg else DEFAULT_N_CAL)
    n_test = args.n_test if args.n_test is not None else ((cfg.n_test if cfg else None) or 1000)
    trials = args.trials if args.trials is not None else (cfg.trials if cfg else 200)
    shift = ShiftSpec.parse(args.shift) if args.shift else NO_SHIFT
    report = run_scaling_experiment(base, k_range, alpha, n_cal, n_test, trials, shift=shift)
    _emit(report, args)
    conditions = {k: ShiftSpec.parse(v) for k, v in _named(args.shift_study, "--shift-study").items()}
    if cfg is not None and not conditions:
        conditions = dict(cfg.shifts)
    if conditions:
        if not args.shift_out:
            raise ValueError("--shift-out is required when shift conditions are given")
        study = run_shift_study(base, conditions, alpha, n_cal, n_test, trials)
        write_report(study, args.shift_out, args.format, _echo_config(args))
    return 0


def cmd_permtest(args) -> int:
    cal, test = load_any(args.cal), load_any(args.test)
    for name, m in (("cal", cal.matrix), ("test", test.matrix)):
        if not 0 <= args.stage < m.n_stages:
            raise ValueError(f"--stage {args.stage} out of range for {name} file with {m.n_stages} stages")
    results = []
    for alpha in args.alphas:
        r = permutation_test(cal.matrix.column(args.stage), test.matrix.column(args.stage), alpha,
                             args.n_permutations, args.seed)
        if args.control_stage is not None:
            neg = negative_control(cal.matrix, test.matrix, args.control_stage, args.stage, alpha)
            r = replace(r, negative_control=neg)
        results.append(r)
    _emit(PermutationReport(args.stage, args.control_stage, args.seed, tuple(results)), args)
    return 0


def cmd_audit(args) -> int:
    splits = _named(args.split, "--split")
    e2e_mode = args.test is not None or args.thresholds is not None
    if bool(splits) == e2e_mode:
        raise ValueError("give either --split NAME=PATH (at least two) or --test with --thresholds")
    if splits:
        result = split_audit({name: load_text_split(p) for name, p in splits.items()}, args.trivial_tokens)
        _emit(result, args)
        return 0
    if args.test is None or args.thresholds is None:
        raise ValueError("the E2E audit needs both --test and --thresholds")
    doc = read_document(args.thresholds)
    if doc.kind != "thresholds":
        raise SchemaError(f"{args.thresholds}: expected a thresholds document, got {doc.kind!r}")
    result = e2e_definition_audit(load_any(args.test).matrix, doc.report, args.n_traced, args.seed)
    _emit(result, args)
    if not result.passed:
        raise ValidityFailure(f"E2E definition audit found {len(result.mismatches)} mismatching rows")
    return 0


def cmd_report(args) -> int:
    from .plots import render_figures
    from .tables import render

    chunks = []
    for path in args.inputs:
        doc = read_document(path)
        if args.format == "human_table":
            chunks.append(f"## {Path(path).name} ({doc.kind})\n\n" + render(doc.report))
        else:
            chunks.append(Path(path).read_text(encoding="utf-8"))
        if not args.no_figures:
            fig_dir = Path(args.figures) if args.figures else (Path(args.out).parent if args.out else None)
            if fig_dir is not None:
                for fig in render_figures(doc.report, fig_dir / Path(path).stem):
                    print(f"figure: {fig}", file=sys.stderr)
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# -- parser ----------------------------------------------------------------


def _common_out(p, required=True):
    p.add_argument("--out", required=required, help="output path")
    p.add_argument("--format", choices=FORMATS, default="structured",
                   help="structured JSON document or human-readable table (default: structured)")


def _synthetic_flags(p):
    p.add_argument("--stages", type=int, default=3, help="stage count K for the synthetic generator (default: 3)")
    p.add_argument("--marginal", default="uniform01", help="uniform01 or beta:A,B (default: uniform01)")
    p.add_argument("--dependence", choices=[d.value for d in DependenceKind], default="independent",
                   help="dependence between stages (default: independent)")
    p.add_argument("--rho", type=float, default=None, help="equicorrelation for gaussian_copula")
    p.add_argument("--seed", type=int, default=0, help="root seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointcp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit thresholds on a calibration score file")
    p.add_argument("--cal", required=True, help="calibration score or probability-table file")
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="miscoverage level (default: 0.1)")
    p.add_argument("--tuning", help="held-out tuning file (required for tuned_bonferroni)")
    p.add_argument("--grid-step", type=float, default=0.005, help="tuned allocation grid step (default: 0.005)")
    p.add_argument("--min-per-stage", type=float, default=None, help="smallest stage budget (default: grid step)")
    p.add_argument("--objective", choices=[o.value for o in Objective], default=Objective.MIN_AVG_SET_SIZE.value,
                   help="tuning objective (default: min_avg_set_size)")
    _common_out(p)
    p.set_defaults(func=cmd_calibrate, parser=p)

    p = sub.add_parser("evaluate", help="coverage and set size of threshold documents on a test file")
    p.add_argument("--test", required=True, help="test score file")
    p.add_argument("--thresholds", required=True, nargs="+", help="one or more thresholds documents")
    p.add_argument("--slice", help="quantile:STAGE[:BINS] or group:FIELD")
    p.add_argument("--shift", default="none", help="test-score shift: none, location:D,... or scale:F,... (default: none)")
    _common_out(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="alpha x n_cal x method grid averaged over seeds")
    p.add_argument("--config", help="experiment config (JSON or YAML)")
    p.add_argument("--cal", help="score pool for calibration (and test, if --test is absent)")
    p.add_argument("--test", help="separate test pool (e.g. shifted data)")
    p.add_argument("--alphas", type=float, nargs="+", help="alpha levels (default: 0.1)")
    p.add_argument("--n-cal", type=int, nargs="+", help="calibration sizes (default: 1000)")
    p.add_argument("--methods", nargs="+", choices=[m.value for m in Method],
                   help="methods (default: independent bonferroni pasc)")
    p.add_argument("--seeds", type=int, nargs="+", help="split seeds (default: 0 1 2 3 4)")
    p.add_argument("--n-test", type=int, default=None, help="test rows per seed (default: rest of pool / 1000)")
    p.add_argument("--n-tune", type=int, default=None, help="tuning rows per seed for tuned_bonferroni")
    p.add_argument("--grid-step", type=float, default=0.005, help="tuned allocation grid step (default: 0.005)")
    p.add_argument("--objective", choices=[o.value for o in Objective], default=Objective.MAX_E2E_COVERAGE.value,
                   help="tuning objective (default: max_e2e_coverage)")
    _synthetic_flags(p)
    _common_out(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="synthetic K-stage scaling and shift study")
    p.add_argument("--config", help="experiment config (JSON or YAML)")
    p.add_argument("--k-range", type=int, nargs="+", help="stage counts (default: 1 2 3 4 5 6)")
    p.add_argument("--alpha", type=float, default=None, help="miscoverage level (default: 0.1)")
    p.add_argument("--n-cal", type=int, default=None, help="calibration rows per trial (default: 1000)")
    p.add_argument("--n-test", type=int, default=None, help="test rows per trial (default: 1000)")
    p.add_argument("--trials", type=int, default=None, help="Monte Carlo trials per K (default: 200)")
    p.add_argument("--shift", default=None, help="shift applied to scaling test data (default: none)")
    p.add_argument("--shift-study", action="append", metavar="NAME=SPEC",
                   help="add a shift condition for the shift study (repeatable)")
    p.add_argument("--shift-out", help="output path for the shift study report")
    _synthetic_flags(p)
    _common_out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("permtest", help="permutation re-split test and mismatched-score control")
    p.add_argument("--cal", required=True, help="calibration score file")
    p.add_argument("--test", required=True, help="test score file")
    p.add_argument("--stage", type=int, default=0, help="stage under test (default: 0)")
    p.add_argument("--alphas", type=float, nargs="+", default=[0.05, 0.1, 0.2],
                   help="alpha levels (default: 0.05 0.1 0.2)")
    p.add_argument("--n-permutations", type=int, default=DEFAULT_PERMUTATIONS, help="re-splits (default: 200)")
    p.add_argument("--control-stage", type=int, default=None,
                   help="stage whose calibration scores feed the negative control")
    p.add_argument("--seed", type=int, default=0, help="root seed (default: 0)")
    _common_out(p)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("audit", help="split-integrity audit or E2E definition audit")
    p.add_argument("--split", action="append", metavar="NAME=PATH",
                   help="text split: score file with raw_text, or plain text one record per line (repeatable)")
    p.add_argument("--trivial-tokens", type=int, default=4, help="token count at or below which a duplicate is trivial (default: 4)")
    p.add_argument("--test", help="test score file for the E2E audit")
    p.add_argument("--thresholds", help="pasc thresholds document for the E2E audit")
    p.add_argument("--n-traced", type=int, default=200, help="rows traced by the E2E audit (default: 200)")
    p.add_argument("--seed", type=int, default=0, help="row-sampling seed (default: 0)")
    _common_out(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="render structured documents as tables and figures")
    p.add_argument("inputs", nargs="+", help="structured report documents")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=FORMATS, default="human_table", help="(default: human_table)")
    p.add_argument("--figures", help="directory for PNG figures (default: next to --out)")
    p.add_argument("--no-figures", action="store_true", help="skip figures")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidityFailure as e:
        print(f"validity check failed: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

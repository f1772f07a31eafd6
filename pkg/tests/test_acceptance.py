"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line, printed in the pytest terminal
summary under "acceptance criteria", before asserting.
"""

import json
import math
import operator
import time
from dataclasses import replace

import numpy as np
import pytest

from jointcp.calibrators import Objective, TunedSearchSpec, calibrate, calibrate_bonferroni
from jointcp.cli import main
from jointcp.core import Method, PredictionCandidates, ScoreMatrix, SetSizeIndex, conformal_quantile
from jointcp.diagnostics import e2e_definition_audit, negative_control, permutation_test
from jointcp.evaluation import calibration_cost, evaluate_coverage
from jointcp.io import dumps_report, load_scores, read_document, write_report, write_scores
from jointcp.synthetic import (
    DependenceKind,
    Marginal,
    SyntheticSpec,
    analytic_joint_coverage,
    derive_rng,
    generate,
    run_scaling_experiment,
)

from oracles import brute_force_quantile
from reports import sample_reports

MC_TOL = 0.005
N_CAL = N_TEST = 1000


def sandwich(alpha, n_cal=N_CAL, tol=MC_TOL):
    return 1 - alpha - tol, 1 - alpha + 1 / (n_cal + 1) + tol


def test_ac01_quantile_oracle(record_criterion):
    g = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches, n_ties, n_inf = 0, 0, 0
    for i in range(1000):
        n = int(g.integers(1, 300))
        if i % 3 == 0:
            scores = g.integers(0, 6, size=n) / 5.0  # heavy ties
        else:
            scores = g.uniform(size=n)
        if i % 4 == 0:
            alpha = float(g.uniform(1e-4, 1 / (n + 1)))  # r > n regime
        else:
            alpha = float(g.choice([0.05, 0.1, 0.2, 0.5, g.uniform(0.001, 0.999)]))
        got = conformal_quantile(scores, alpha)
        want = brute_force_quantile(scores, alpha)
        mismatches += got != want
        n_ties += len(np.unique(scores)) < n
        n_inf += math.isinf(want)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5.0 and n_ties > 100 and n_inf > 100
    record_criterion("AC1 quantile oracle", ok,
                     f"{mismatches} mismatches / 1000 ({n_ties} with ties, {n_inf} with r>n), {elapsed:.2f}s < 5s")
    assert ok


def test_ac02_pasc_sandwich(record_criterion):
    t0 = time.perf_counter()
    base = SyntheticSpec(3, 1, seed=202)
    means = {}
    for alpha in (0.05, 0.10):
        rep = run_scaling_experiment(base, (3,), alpha, N_CAL, N_TEST, 500, methods=(Method.PASC,))
        means[alpha] = rep.cell(3, Method.PASC).mean
    elapsed = time.perf_counter() - t0
    inside = {a: sandwich(a)[0] <= m <= sandwich(a)[1] for a, m in means.items()}
    ok = all(inside.values()) and elapsed < 120
    detail = ", ".join(f"alpha={a}: {m:.4f} in [{sandwich(a)[0]:.4f}, {sandwich(a)[1]:.4f}]" for a, m in means.items())
    record_criterion("AC2 PASC guarantee sandwich", ok, f"{detail}, {elapsed:.1f}s < 120s")
    assert ok


def test_ac03_independent_collapse(record_criterion):
    rep = run_scaling_experiment(SyntheticSpec(3, 1, seed=303), (3, 6), 0.1, N_CAL, N_TEST, 300,
                                 methods=(Method.INDEPENDENT,))
    m3, m6 = rep.cell(3, "independent").mean, rep.cell(6, "independent").mean
    ok = abs(m3 - 0.729) <= 0.015 and abs(m6 - 0.5314) <= 0.02
    assert analytic_joint_coverage(0.1, 3) == pytest.approx(0.729)
    record_criterion("AC3 independent-CP collapse", ok,
                     f"K=3 {m3:.4f} vs 0.729 +-0.015, K=6 {m6:.4f} vs 0.5314 +-0.02")
    assert ok


DEPENDENCE = {
    "rho=0": dict(dependence=DependenceKind.GAUSSIAN_COPULA, rho=0.0),
    "rho=0.5": dict(dependence=DependenceKind.GAUSSIAN_COPULA, rho=0.5),
    "rho=0.9": dict(dependence=DependenceKind.GAUSSIAN_COPULA, rho=0.9),
    "comonotone": dict(dependence=DependenceKind.COMONOTONE),
}


def _dependence_run(name, alpha=0.1, trials=300):
    base = SyntheticSpec(3, 1, seed=404, **DEPENDENCE[name])
    rep = run_scaling_experiment(base, (3,), alpha, N_CAL, N_TEST, trials, methods=(Method.BONFERRONI, Method.PASC))
    return rep.cell(3, "bonferroni").mean, rep.cell(3, "pasc").mean


def test_ac04_bonferroni_validity_under_dependence(record_criterion):
    lo, hi = sandwich(0.1)
    parts, ok = [], True
    for name in DEPENDENCE:
        bonf, pasc = _dependence_run(name)
        ok &= bonf >= 0.9 - 0.01 and lo <= pasc <= hi
        parts.append(f"{name}: Bonf {bonf:.4f}, PASC {pasc:.4f}")
    record_criterion("AC4 Bonferroni valid under dependence", ok,
                     "; ".join(parts) + f" (Bonf >= 0.89, PASC in [{lo:.4f}, {hi:.4f}])")
    assert ok


def test_ac05_pasc_tighter_under_positive_dependence(record_criterion):
    bonf, pasc = _dependence_run("rho=0.9")
    lo, hi = sandwich(0.1)
    excess_bonf, excess_pasc = bonf - 0.9, pasc - 0.9
    ok = lo <= pasc <= hi and excess_bonf >= 0.02 and excess_bonf - excess_pasc > 0
    record_criterion("AC5 PASC vs Bonferroni at rho=0.9", ok,
                     f"PASC {pasc:.4f} in [{lo:.4f}, {hi:.4f}], Bonferroni over-covers by {excess_bonf:.4f} >= 0.02")
    assert ok


def test_ac06_single_stage_degeneracy(record_criterion):
    g = np.random.default_rng(606)
    checked, ok = 0, True
    for n in (1, 5, 9, 50, 1000):
        for ties in (False, True):
            col = (g.integers(0, 4, size=(n, 1)) / 3.0) if ties else g.uniform(size=(n, 1))
            cal = ScoreMatrix(col, tuple(f"c{i}" for i in range(n)))
            tune = ScoreMatrix(g.uniform(size=(40, 1)), tuple(f"t{i}" for i in range(40)))
            test = ScoreMatrix(g.uniform(size=(200, 1)))
            for alpha in (0.01, 0.1, 0.3):
                spec = TunedSearchSpec(tune, grid_step=alpha, objective=Objective.MAX_E2E_COVERAGE)
                tvs = [calibrate(cal, alpha, m, spec) for m in Method]
                thresholds = {tv.thresholds for tv in tvs}
                coverage = {evaluate_coverage(test, tv).e2e_coverage for tv in tvs}
                ok &= len(thresholds) == 1 and len(coverage) == 1
                checked += 1
    record_criterion("AC6 K=1 degeneracy", ok, f"{checked} inputs, four methods give identical thresholds and coverage")
    assert ok


def test_ac07_permutation_recovery(record_criterion):
    t0 = time.perf_counter()
    spec = SyntheticSpec(1, 1500, seed=707, marginals=(Marginal.beta(2, 5),))
    pool = generate(spec).column(0)
    cal, test = pool[:1000], pool[1000:]
    res = {a: permutation_test(cal, test, a, n_permutations=200, seed=7) for a in (0.05, 0.10, 0.20)}
    elapsed = time.perf_counter() - t0
    ok = all(abs(r.permutation_mean - (1 - a)) <= 0.03 for a, r in res.items()) and elapsed < 30
    detail = ", ".join(f"alpha={a}: {r.permutation_mean:.4f} vs {1 - a:.2f}" for a, r in res.items())
    record_criterion("AC7 permutation mean recovery", ok, f"{detail} (+-0.03), {elapsed:.2f}s < 30s")
    assert ok


def test_ac08_negative_control(record_criterion):
    # stage A = U(0,1) + 0.2, stage B = U(0,1): B is stochastically dominated by A.
    # The mismatched control calibrates on B and evaluates on A; the matched control uses A for both.
    alpha, trials = 0.1, 1000
    mismatched, matched = [], []
    for t in range(trials):
        cal = derive_rng(808, t, 0).uniform(size=(N_CAL, 2)) + [0.2, 0.0]
        test = derive_rng(808, t, 1).uniform(size=(N_TEST, 2)) + [0.2, 0.0]
        mismatched.append(negative_control(cal, test, 1, 0, alpha))
        matched.append(negative_control(cal, test, 0, 0, alpha))
    mis, mat = float(np.mean(mismatched)), float(np.mean(matched))
    ok = mis < 1 - alpha - 0.1 and mat >= 1 - alpha - MC_TOL
    record_criterion("AC8 negative control", ok,
                     f"mismatched {mis:.4f} < {1 - alpha - 0.1:.2f}; matched {mat:.4f} >= 1-alpha "
                     f"(MC tolerance {MC_TOL}, {trials} splits)")
    assert ok


def test_ac09_e2e_definition_audit(record_criterion):
    spec = SyntheticSpec(3, 1, seed=909, dependence="gaussian_copula", rho=0.3)
    cal = generate(replace(spec, n_samples=N_CAL), 0)
    test = generate(replace(spec, n_samples=N_TEST), 1)
    tv = calibrate(cal, 0.1, "pasc")
    clean = e2e_definition_audit(test, tv, 200, seed=9)

    q = tv.thresholds[0]
    boundary = ScoreMatrix(np.vstack([test.scores[:9], [[0.05, q, 0.2]]]))

    def strict(row, thresholds):
        return all(operator.lt(s, x) for s, x in zip(row, thresholds))

    broken = e2e_definition_audit(boundary, tv, boundary.n_samples, seed=9, stagewise_check=strict)
    caught = not broken.passed and any(m.scores == (0.05, q, 0.2) for m in broken.mismatches)
    ok = clean.passed and clean.n_traced == 200 and caught
    record_criterion("AC9 E2E definition audit", ok,
                     f"{clean.n_traced - len(clean.mismatches)}/200 traced rows matched; "
                     f"strict-< bug {'caught' if caught else 'missed'} on boundary row")
    assert ok


def test_ac10_calibration_cost(record_criterion):
    m = ScoreMatrix(np.random.default_rng(1010).uniform(size=(1_000_000, 6)))
    costs = {meth: calibration_cost(m, meth, 0.1, repeats=5) for meth in ("pasc", "independent", "bonferroni")}
    counts = {k: c.n_quantiles for k, c in costs.items()}
    fastest_other = min(costs["independent"].seconds, costs["bonferroni"].seconds)
    ok = counts == {"pasc": 1, "independent": 6, "bonferroni": 6} and costs["pasc"].seconds <= fastest_other
    record_criterion("AC10 calibration cost", ok,
                     f"quantiles {counts}; best-of-5 wall-clock PASC {costs['pasc'].seconds * 1e3:.1f}ms, "
                     f"independent {costs['independent'].seconds * 1e3:.1f}ms, "
                     f"Bonferroni {costs['bonferroni'].seconds * 1e3:.1f}ms")
    assert ok


def _frontier_fixture(seed, n, prefix):
    """Stage 1 is hard: its true label competes with four distractors spread over [0, 1].
    Stages 0 and 2 are easy: low true-label scores and distractors near 1."""
    g = np.random.default_rng(seed)
    scores = np.column_stack([g.beta(1, 8, n), g.uniform(size=n), g.beta(1, 8, n)])
    cands = []
    for i in range(n):
        easy0 = (("y", float(scores[i, 0])),) + tuple((f"d{j}", float(g.uniform(0.95, 1.0))) for j in range(2))
        hard = (("y", float(scores[i, 1])),) + tuple((f"d{j}", float(g.uniform())) for j in range(4))
        easy2 = (("y", float(scores[i, 2])),) + tuple((f"d{j}", float(g.uniform(0.95, 1.0))) for j in range(2))
        cands.append((easy0, hard, easy2))
    ids = tuple(f"{prefix}{i}" for i in range(n))
    return ScoreMatrix(scores, ids), PredictionCandidates(tuple(cands), tuple(("y", "y", "y") for _ in range(n)))


def test_ac11_tuned_frontier(record_criterion):
    alpha, K = 0.1, 3
    cal, _ = _frontier_fixture(1111, N_CAL, "c")
    tune, tune_c = _frontier_fixture(1112, N_CAL, "t")
    spec = TunedSearchSpec(tune, grid_step=0.005, objective=Objective.MIN_AVG_SET_SIZE, candidates=tune_c)
    tuned = calibrate(cal, alpha, "tuned_bonferroni", spec)
    uniform = calibrate_bonferroni(cal, alpha)
    index = SetSizeIndex(tune_c)
    obj_tuned, obj_uniform = index.avg_set_size(tuned.thresholds), index.avg_set_size(uniform.thresholds)
    ok = tuned.allocation[1] > alpha / K and obj_tuned <= obj_uniform
    alloc = ", ".join(f"{a:.3f}" for a in tuned.allocation)
    record_criterion("AC11 tuned frontier", ok,
                     f"allocation ({alloc}), hard stage {tuned.allocation[1]:.3f} > {alpha / K:.4f}; "
                     f"tuning avg set size {obj_tuned:.4f} <= uniform {obj_uniform:.4f}")
    assert ok


def _cli_commands(d):
    return [
        ("calibrate", "--cal", d / "cal.jsonl", "--method", "pasc"),
        ("calibrate", "--cal", d / "cal.jsonl", "--method", "tuned_bonferroni", "--tuning", d / "tune.jsonl",
         "--objective", "max_e2e_coverage", "--grid-step", "0.02"),
        ("evaluate", "--test", d / "test.jsonl", "--thresholds", d / "pasc.json", "--slice", "quantile:0:5"),
        ("sweep", "--cal", d / "cal.jsonl", "--n-cal", "200", "--seeds", "0", "1"),
        ("sweep", "--n-cal", "100", "--n-test", "100", "--seeds", "3", "--dependence", "gaussian_copula",
         "--rho", "0.5"),
        ("simulate", "--trials", "3", "--k-range", "1", "3", "--n-cal", "100", "--n-test", "100", "--seed", "4"),
        ("permtest", "--cal", d / "cal.jsonl", "--test", d / "test.jsonl", "--n-permutations", "10",
         "--control-stage", "1", "--seed", "2"),
        ("audit", "--split", f"a={d / 'cal.txt'}", "--split", f"b={d / 'test.txt'}"),
        ("audit", "--test", d / "test.jsonl", "--thresholds", d / "pasc.json", "--seed", "5"),
    ]


def test_ac12_round_trip_and_determinism(tmp_path, record_criterion):
    failures = []
    # structured reports of every kind
    n_reports = 0
    for kind, reps in sample_reports().items():
        for i, rep in enumerate(reps):
            path = tmp_path / f"{kind}{i}.json"
            write_report(rep, path, config={"seed": i})
            back = read_document(path).report
            if back != rep or dumps_report(back, {"seed": i}) != path.read_text():
                failures.append(kind)
            n_reports += 1
    # score files
    spec = SyntheticSpec(3, 400, seed=1212)
    for name, role in (("cal", 0), ("test", 1), ("tune", 2)):
        m = generate(spec, role)
        m = ScoreMatrix(m.scores, tuple(f"{name}{i}" for i in range(400)))
        write_scores(tmp_path / f"{name}.jsonl", m)
        if load_scores(tmp_path / f"{name}.jsonl").matrix != m:
            failures.append(f"{name}.jsonl")
        (tmp_path / f"{name}.txt").write_text("\n".join(f"record {i % 50} of {name}" for i in range(60)) + "\nW L PCT GB\n")
    assert main(["calibrate", "--cal", str(tmp_path / "cal.jsonl"), "--method", "pasc",
                 "--out", str(tmp_path / "pasc.json")]) == 0
    # every command twice with identical flags
    commands = _cli_commands(tmp_path)
    for i, argv in enumerate(commands):
        out = tmp_path / f"cmd{i}.json"
        blobs = []
        for _ in range(2):
            code = main([str(a) for a in argv] + ["--out", str(out)])
            blobs.append((code, out.read_bytes()))
            out.unlink()
        if blobs[0] != blobs[1] or blobs[0][0] != 0:
            failures.append(argv[0])
        else:
            json.loads(blobs[0][1])
    ok = not failures
    record_criterion("AC12 round-trip and determinism", ok,
                     f"{n_reports} reports + 3 score files round-trip, {len(commands)} commands byte-identical"
                     + (f"; failures: {failures}" if failures else ""))
    assert ok

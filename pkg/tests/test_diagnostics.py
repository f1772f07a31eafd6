import operator

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointcp.calibrators import calibrate_pasc
from jointcp.core import Method, ScoreMatrix, ThresholdVector, conformal_quantile
from jointcp.diagnostics import (
    e2e_definition_audit,
    negative_control,
    normalize_tokens,
    permutation_test,
    split_audit,
    token_hash,
)


def test_permutation_constant_scores():
    r = permutation_test([0.3] * 50, [0.3] * 20, 0.1, n_permutations=10)
    assert r.actual_coverage == 1.0
    assert set(r.permutation_coverages) == {1.0} and r.permutation_std == 0.0


def test_permutation_is_reproducible(rng):
    cal, test = rng.uniform(size=1000), rng.uniform(size=500)
    a = permutation_test(cal, test, 0.1, n_permutations=2, seed=5)
    b = permutation_test(cal, test, 0.1, n_permutations=2, seed=5)
    assert a == b and len(a.permutation_coverages) == 2
    assert a != permutation_test(cal, test, 0.1, n_permutations=2, seed=6)


def test_permutation_preserves_sizes_and_matches_manual_resplit(rng):
    from jointcp.synthetic import derive_rng

    cal, test = rng.uniform(size=30), rng.uniform(size=12)
    r = permutation_test(cal, test, 0.2, n_permutations=3, seed=1)
    pool = np.concatenate([cal, test])
    for j, cov in enumerate(r.permutation_coverages):
        p = derive_rng(1, j).permutation(pool)
        q = conformal_quantile(p[:30], 0.2)
        assert cov == np.mean(p[30:] <= q)
    assert r.actual_coverage == np.mean(test <= conformal_quantile(cal, 0.2))


def test_permutation_validation():
    with pytest.raises(ValueError, match="empty"):
        permutation_test([], [0.1], 0.1)
    with pytest.raises(ValueError):
        permutation_test([0.1], [0.1], 0.1, n_permutations=1)


def test_negative_control_examples(rng):
    cal = ScoreMatrix(np.column_stack([rng.uniform(size=500), np.ones(500), rng.uniform(size=500) * 0.5]))
    test = ScoreMatrix(np.column_stack([rng.uniform(size=400), rng.uniform(size=400), rng.uniform(size=400)]))
    # self-control is ordinary split CP on that stage
    assert negative_control(cal, test, 0, 0, 0.1) == np.mean(test.column(0) <= conformal_quantile(cal.column(0), 0.1))
    assert negative_control(cal, test, 1, 0, 0.1) == 1.0
    # stage 2 is stochastically smaller than stage 0, so it under-covers when reused there
    assert negative_control(cal, test, 2, 0, 0.1) < 0.9
    with pytest.raises(ValueError):
        negative_control(cal, test, 3, 0, 0.1)


def test_split_audit_disjoint():
    r = split_audit({"train": ["a b c", "d e"], "test": ["f g", "h i j k l"]})
    assert r.n_cross_split == 0 and r.groups == ()


def test_split_audit_trivial_header_noise():
    r = split_audit({"train": ["Scorers :", "the match ended in a draw"], "test": ["Scorers :", "W L PCT GB"],
                     "dev": ["W L PCT GB"]})
    assert r.n_cross_split == 2 and r.trivial_flagged == 2 and r.substantive == 0
    texts = {g.text: g for g in r.groups}
    assert texts["Scorers :"].members == (("test", ("0",)), ("train", ("0",)))
    assert texts["W L PCT GB"].token_count == 4


def test_split_audit_normalizes_whitespace():
    r = split_audit({"a": {"x1": "  Peter   Blackburn \t said "}, "b": {"y9": "Peter Blackburn said"}})
    assert r.n_cross_split == 1 and r.groups[0].members == (("a", ("x1",)), ("b", ("y9",)))
    assert normalize_tokens(" a\n b ") == ("a", "b")
    assert token_hash(("ab",)) != token_hash(("a", "b"))


def test_split_audit_needs_two_splits():
    with pytest.raises(ValueError):
        split_audit({"only": ["x"]})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.integers(0, 2**31))
def test_audit_finds_exactly_planted_duplicates(d, seed):
    g = np.random.default_rng(seed)
    # distinct sentences per split, so the only overlap is what gets planted
    train = [f"train sentence {i} {g.integers(1e9)}" for i in range(30)]
    test = [f"test sentence {i} {g.integers(1e9)}" for i in range(20)]
    planted = [f"shared record number {i} with several tokens" for i in range(d)]
    r = split_audit({"train": train + planted, "test": planted + test})
    assert r.n_cross_split == d and r.trivial_flagged == 0
    assert all(len(grp.members) >= 2 for grp in r.groups)


@pytest.fixture
def pasc_setup(rng):
    cal = ScoreMatrix(rng.uniform(size=(500, 3)))
    test = ScoreMatrix(rng.uniform(size=(400, 3)), tuple(f"t{i}" for i in range(400)))
    return test, calibrate_pasc(cal, 0.1)


def test_e2e_audit_passes(pasc_setup):
    test, tv = pasc_setup
    r = e2e_definition_audit(test, tv, 200, seed=3)
    assert r.passed and r.n_traced == 200 and not r.mismatches
    assert len({t.row for t in r.trace}) == 200
    assert r.trace[0].sample_id == f"t{r.trace[0].row}"


def test_e2e_audit_vacuous():
    tv = ThresholdVector((0.5, 0.5), Method.PASC, 0.1, 10, n_quantiles=1)
    r = e2e_definition_audit(ScoreMatrix([[0.1, 0.2]]), tv, 0)
    assert r.passed and r.trace == ()


def test_e2e_audit_catches_strict_comparison():
    q = 0.6
    tv = ThresholdVector((q, q, q), Method.PASC, 0.1, 10, n_quantiles=1)
    boundary = ScoreMatrix([[0.1, q, 0.3], [0.2, 0.1, 0.4], [0.9, 0.1, 0.1]])

    def strict(row, thresholds):
        return all(operator.lt(s, t) for s, t in zip(row, thresholds))

    r = e2e_definition_audit(boundary, tv, 3, stagewise_check=strict)
    assert not r.passed
    assert [m.row for m in r.mismatches] == [0]
    assert r.mismatches[0].scores == (0.1, q, 0.3)


def test_e2e_audit_rejects_non_pasc(rng):
    tv = ThresholdVector((0.5, 0.5), Method.BONFERRONI, 0.1, 10)
    with pytest.raises(ValueError):
        e2e_definition_audit(ScoreMatrix([[0.1, 0.2]]), tv, 1)

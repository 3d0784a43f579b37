from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conftest import load, rationals
from stopcert.linear import (NonLinearError, PastHypothesisError, check_pdb_bound, determinize,
                             invariant_report_linear, past_bound, satisfies_identity,
                             synth_linear_invariants)
from stopcert.moments import Distribution
from stopcert.poly import Inequality, Polynomial, parse_polynomial
from stopcert.preexp import LocPoly, check_supermartingale, initial_expectation, preexp_transition
from stopcert.pts import Guard, Pts, Transition, UpdateBranch
from stopcert.sim import RunConfig, estimate_expectation

XS = ("x1", "x2", "x3")
RS = ("r1", "r2")


def linear_poly(names):
    return st.tuples(rationals, st.lists(rationals, min_size=len(names), max_size=len(names))).map(
        lambda cv: Polynomial.constant(cv[0], names) + sum(
            (Polynomial.var(v, names) * c for v, c in zip(names, cv[1])), Polynomial.zero(names)))


moments = st.one_of(
    st.builds(Distribution.normal, rationals, st.fractions(0, 2, max_denominator=3)),
    st.builds(lambda v, w: Distribution.discrete([(v, Fraction(1, 2)), (w, Fraction(1, 2))]), rationals, rationals),
)


@st.composite
def linear_systems(draw):
    n_branch = draw(st.integers(1, 3))
    raw = draw(st.lists(st.integers(1, 9), min_size=n_branch, max_size=n_branch))
    probs = [Fraction(w, sum(raw)) for w in raw]
    branches = tuple(UpdateBranch(q, tuple((v, draw(linear_poly(XS + RS))) for v in XS)) for q in probs)
    back = (UpdateBranch(Fraction(1), tuple((v, draw(linear_poly(XS + RS))) for v in XS)),)
    guard = parse_polynomial("x1", XS)
    t0 = Transition("a", Guard((Inequality(guard, False),)), branches, "b")
    t1 = Transition("a", Guard((Inequality(-guard, True),)), back, "a")
    t2 = Transition("b", Guard(), back, "a")
    randoms = tuple((r, draw(moments)) for r in RS)
    init = tuple((v, Distribution.constant(0)) for v in XS)
    return Pts(XS, randoms, ("a", "b"), "a", None, init, (t0, t1, t2))


@settings(max_examples=100)
@given(linear_systems(), linear_poly(XS), linear_poly(XS))
def test_linear_preexp_equals_deterministic(p, ha, hb):
    cdts = determinize(p)
    h = LocPoly(p, {"a": ha, "b": hb})
    for t, dt in zip(p.transitions, cdts.system.transitions):
        det = h[t.destination].substitute(dt.branches[0].images)
        assert preexp_transition(p, h, t) == det


@settings(max_examples=30)
@given(linear_systems())
def test_synthesized_elements_satisfy_identity(p):
    basis = synth_linear_invariants(determinize(p), check_pdb=False)
    for el in basis.elements:
        assert satisfies_identity(basis.cdts, el.h)
        verdicts = check_supermartingale(p, el.h, shift_step=True)
        assert all(v.verdict == "YES" for v in verdicts)


def test_determinize_is_idempotent(hare):
    once = determinize(hare).system
    assert determinize(once).system == once


def test_nonlinear_system_is_rejected(markov):
    with pytest.raises(NonLinearError):
        synth_linear_invariants(determinize(markov))


def test_hare_basis_spans_the_known_invariants(hare):
    basis = synth_linear_invariants(determinize(hare))
    assert len(basis) == 2
    assert basis.membership("2*x1 - 5*x2") == [2, -5]
    assert basis.membership("x1 - 5/2*k") == [1, 0]
    assert basis.membership("x2 - k") == [0, 1]
    assert basis.membership("x1 + x2") is None
    for el in basis.elements:
        assert el.bounded


def test_hare_pdb_constants(hare):
    assert check_pdb_bound(hare, LocPoly(hare, {"l0": "2*x1 - 5*x2", "lF": "2*x1 - 5*x2"})).K == Fraction(15, 2)
    assert check_pdb_bound(hare, LocPoly(hare, {"l0": "x2 - k", "lF": "x2 - k + 1"})).K == 0


def test_hare_runtime_bound_and_report(hare):
    past = past_bound(hare, LocPoly(hare, "x2 - x1"), -9, Fraction(3, 2))
    assert past.bound == 26
    basis = synth_linear_invariants(determinize(hare))
    h = basis.combine([2, -5])
    (report,) = invariant_report_linear(hare, [h], past)
    assert report.initial_expectation == -150
    assert report.precondition == "PDB" and "K" in report.evidence


def test_betting_invariant_is_unbounded(betting):
    basis = synth_linear_invariants(determinize(betting))
    assert basis.membership("x2") == [1]
    assert basis.elements[0].pdb.verdict == "unbounded-evidence"
    assert invariant_report_linear(betting, basis, "asserted") == []


def test_report_requires_runtime_evidence(hare):
    basis = synth_linear_invariants(determinize(hare))
    with pytest.raises(ValueError):
        invariant_report_linear(hare, basis, "")


@pytest.mark.parametrize("n, bound", [(1, 24), (2, 44)])
def test_inner_loop_runtime(n, bound):
    p = load("nested_inner", n=n)
    res = past_bound(p, LocPoly(p, f"{n} - y"), Fraction(-1, 5), Fraction(1, 20))
    assert res.bound == bound


def test_unverifiable_lower_bound_needs_assertion():
    p = load("nested_inner", n=2)
    with pytest.raises(PastHypothesisError):
        past_bound(p, LocPoly(p, "1 - y"), Fraction(-1, 5), Fraction(1, 20))
    res = past_bound(p, LocPoly(p, "1 - y"), Fraction(-1, 5), Fraction(1, 20), assert_lower_bound=True)
    assert res.assumptions


def test_outer_loop_basis():
    p = load("nested_outer")
    basis = synth_linear_invariants(determinize(p))
    assert basis.membership("z - 20*x") == [-20, 1]


@pytest.mark.slow
def test_hare_reported_invariants_hold_at_termination(hare):
    basis = synth_linear_invariants(determinize(hare))
    cfg = RunConfig(100_000, 2000, seed=17)
    for el in basis.elements:
        est = estimate_expectation(hare, cfg, el.h, "stop")
        assert est.truncated_fraction == 0
        assert est.within(float(initial_expectation(hare, el.h))), est

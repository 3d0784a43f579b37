import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import load
from stopcert.poly import Polynomial, parse_polynomial
from stopcert.preexp import LocPoly, preexp_poly
from stopcert.sim import RunConfig, estimate_at_steps, estimate_martingale_drift
from stopcert.sos import (build_constraints, certify_nonnegative_on,
                          check_sos_membership, compile_to_sdp, doob_invariant, identity_residuals,
                          synthesize, verify_certificate)

XS = ("x1", "x2")
PRINTED_V = "(0.74227*x1 - 0.086046*x2)^2 + (0.02481*x1 + 0.21398*x2)^2"


@pytest.fixture(scope="module")
def markov_cert(markov):
    res = synthesize(markov, 2, Fraction(1, 5), homogeneous=True)
    assert res.status == "feasible", res.reason
    return res.certificate


def rebuilt_identity(sys, grams, index):
    """The identity polynomial from Gram matrices and exact pre-expectations, kept symbolic."""
    xs = sys.variables
    polys = [blk.poly(G, xs) for blk, G in zip(sys.blocks, grams)]
    ident = sys.identities[index]
    total = ident.const if ident.const is not None else Polynomial.zero(xs)
    for bi, mult in ident.gram_terms:
        total = total + polys[bi] * mult
    for bi, ti, sign in ident.preexp_terms:
        total = total + preexp_poly(sys.pts, polys[bi], sys.pts.transitions[ti]) * sign
    return total


# membership -----------------------------------------------------------------

def test_membership_examples():
    x = ("x",)
    assert check_sos_membership(parse_polynomial("x^4 - 2*x^2 + 1", x)).is_sos
    neg = check_sos_membership(parse_polynomial("-x^2 - 1", x))
    assert not neg.is_sos and neg.margin < 0
    assert not check_sos_membership(parse_polynomial("x^3", x)).is_sos


def test_nonnegativity_on_a_half_line():
    x = ("x",)
    # x >= 0 certifies x^3 + x >= 0, which is not globally SOS
    assert certify_nonnegative_on(parse_polynomial("x^3 + x", x), [parse_polynomial("x", x)]) is not None
    assert certify_nonnegative_on(parse_polynomial("x - 1", x), [parse_polynomial("x", x)]) is None


def test_bad_degree(markov):
    with pytest.raises(ValueError):
        build_constraints(markov, 3, Fraction(1, 5))


# affinity -------------------------------------------------------------------

@pytest.mark.parametrize("homogeneous", [True, False])
def test_constraints_are_affine_in_gram_entries(markov, homogeneous):
    sys = build_constraints(markov, 2, Fraction(1, 5), homogeneous)
    prob = compile_to_sdp(sys)
    rng = np.random.default_rng(0)
    base = np.round(rng.normal(size=sys.n_params) * 8) / 8
    for k in rng.choice(sys.n_params, size=4, replace=False):
        ys = [base.copy() for _ in range(3)]
        ys[1][k] += 0.5
        ys[2][k] += 1.0
        for i in range(len(sys.identities)):
            r0, r1, r2 = (rebuilt_identity(sys, [b.matrix(y) for b in sys.blocks], i) for y in ys)
            assert r2 - r0 == (r1 - r0) * 2
    # the compiled rows agree with the independent rebuild
    y = rng.normal(size=sys.n_params)
    rows = prob.eq_A @ y - prob.eq_b
    n_ident = len(rows) - len(sys.normalization)
    rebuilt = identity_residuals(sys, [b.matrix(y) for b in sys.blocks])
    assert max(rebuilt) == pytest.approx(np.max(np.abs(rows[:n_ident])), rel=1e-9)


# synthesis on the bundled systems --------------------------------------------

def test_markov_certificate(markov, markov_cert):
    assert markov_cert.alpha == Fraction(4, 5)
    assert max(markov_cert.verification["identity_residuals"].values()) <= 1e-6
    assert min(markov_cert.verification["min_eigenvalues"].values()) >= -1e-8
    V = markov_cert.V["l0"]
    # V is proportional to (x1 - x2)^2 under the trace normalization
    assert float(V.coeff(parse_polynomial("x1*x2", XS).monomials()[0])) == pytest.approx(-1, abs=1e-5)
    assert len(markov_cert.summands["l0"]) == 1


def test_markov_nonhomogeneous_and_quartic(markov):
    assert synthesize(markov, 2, Fraction(1, 5)).status == "feasible"
    assert synthesize(markov, 4, Fraction(1, 5), homogeneous=True).status == "feasible"


def test_hand_written_certificate(markov):
    V = LocPoly(markov, "(x1 - x2)^2")
    assert preexp_poly(markov, V["l0"], markov.transitions[0]) == V["l0"] * Fraction(13, 18)
    assert verify_certificate(markov, V, Fraction(1, 5)).ok
    # alpha below 13/18 is impossible for this V
    assert not verify_certificate(markov, V, Fraction(3, 10)).ok


def test_frozen_system_has_no_certificate(markov):
    import json
    from conftest import DATA
    from stopcert.pts import load_pts
    doc = json.loads((DATA / "markov.json").read_text())
    doc["transitions"][0]["branches"] = [{"p": "1", "update": {}}]
    res = synthesize(load_pts(doc), 2, Fraction(1, 5))
    assert res.status == "infeasible" and res.solution.witness is not None


def test_while_loop_literal_certificate_counterexample(while_loop):
    V = LocPoly(while_loop, {"l0": PRINTED_V})
    res = verify_certificate(while_loop, V, Fraction(1, 10 ** 6))
    assert not res.ok
    # at (1, 10) the loop guard holds and V grows in expectation
    loop = while_loop.transitions[0]
    gap = V["l0"] * (1 - Fraction(1, 10 ** 6)) - preexp_poly(while_loop, V["l0"], loop)
    pt = {"x1": Fraction(1), "x2": Fraction(10)}
    assert loop.guard.holds(pt) and gap.evaluate(pt) < -100


def test_doob_correction_is_exact(markov, markov_cert):
    rep = doob_invariant(markov, LocPoly(markov, "x1 - x2"), markov_cert)
    (piece,) = rep.preexp_pieces
    assert piece["correction"] == "1/6*x1 - 1/6*x2"
    assert rep.initial_expectation == 1 and rep.precondition == "IUD"


def test_undominated_polynomial_is_refused(markov, markov_cert):
    with pytest.raises(ValueError):
        doob_invariant(markov, LocPoly(markov, "x1 + x2"), markov_cert)


# soundness and empirical consequences ---------------------------------------

def test_summand_inequality_at_random_points(markov, markov_cert):
    rng = np.random.default_rng(5)
    V = markov_cert.V["l0"]
    for t in markov.transitions:
        j = len(t.branches)
        pre_V = preexp_poly(markov, V, t)
        for P in markov_cert.summands["l0"]:
            pre_P = preexp_poly(markov, P, t)
            for x in rng.normal(0, 3, size=(1000, 2)):
                pt = dict(zip(XS, x))
                lhs, rhs = float(pre_P.evaluate(pt)) ** 2, j * float(pre_V.evaluate(pt))
                assert lhs <= rhs + 1e-9 * (1 + abs(rhs))


def _rounded(poly, den=100):
    return poly.map_coefficients(lambda c: Fraction(c).limit_denominator(den))


@pytest.mark.slow
def test_geometric_decay_and_summability(markov, markov_cert):
    # Coordinates explode along trajectories, so float noise in the Gram
    # coefficients would swamp the estimate.  Round to small denominators and
    # re-verify exactly before using the certificate.
    V = LocPoly(markov, {"l0": _rounded(markov_cert.V["l0"])})
    P2 = LocPoly(markov, {"l0": _rounded(markov_cert.summands["l0"][0] ** 2)})
    assert verify_certificate(markov, V, 1 - markov_cert.alpha).ok
    cfg = RunConfig(20_000, 20, seed=9, exact=True)
    steps = list(range(11))
    ev = estimate_at_steps(markov, cfg, V, steps)
    ep2 = estimate_at_steps(markov, cfg, P2, steps)
    alpha = float(markov_cert.alpha)
    v0 = ev[0].mean
    for k, e in zip(steps, ev):
        assert e.mean <= alpha ** k * v0 + 4 * e.stderr
    # sum of E P^2 is bounded by the geometric series of E V
    assert sum(e.mean for e in ep2) <= v0 / (1 - alpha) + 4 * math.fsum(e.stderr for e in ep2)
    # and E|P| <= sqrt(E V) gives the bound for absolute values
    eabs = [math.sqrt(e.mean) for e in ep2]
    assert sum(eabs) <= math.sqrt(v0) / (1 - math.sqrt(alpha))


@pytest.mark.slow
def test_doob_martingale_has_no_drift(markov, markov_cert):
    rep = doob_invariant(markov, LocPoly(markov, "x1 - x2"), markov_cert)
    drifts = estimate_martingale_drift(markov, RunConfig(20_000, 20, seed=4, exact=True), rep, 10)
    for d in drifts:
        assert abs(d.mean) <= 4 * d.stderr + 1e-12

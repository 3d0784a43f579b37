import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stopcert.sdp import SdpDimensionError, SdpOptions, SdpProblem, min_eigenvalue, solve


def sym(i, j, n):
    E = np.zeros((n, n))
    E[i, j] = E[j, i] = 1.0
    return E


def gram_problem(coeffs):
    """Gram SDP for a univariate quartic c0 + c1 x + ... + c4 x^4 in the basis (1, x, x^2)."""
    pairs = [(i, j) for i in range(3) for j in range(i, 3)]
    A = np.array([sym(i, j, 3) for i, j in pairs])
    eq = np.zeros((5, len(pairs)))
    for k, (i, j) in enumerate(pairs):
        eq[i + j, k] = 1.0 if i == j else 2.0
    return SdpProblem(len(pairs), [(np.zeros((3, 3)), A)], eq, np.array(coeffs, dtype=float), ["gram"])


def interval_problem():
    return SdpProblem(1, [(np.zeros((1, 1)), np.ones((1, 1, 1))), (np.ones((1, 1)), -np.ones((1, 1, 1)))])


def test_margin_of_interval():
    sol = solve(interval_problem())
    assert sol.status == "feasible"
    assert sol.t == pytest.approx(0.5, abs=1e-4)
    assert sol.y[0] == pytest.approx(0.5, abs=1e-4)


@pytest.mark.parametrize("c", [0.5, 1.5])
def test_margin_scales_with_the_problem(c):
    base = solve(interval_problem()).t
    assert solve(interval_problem().scaled(c)).t == pytest.approx(c * base, rel=1e-6)


def test_sos_quartic_is_feasible():
    p = gram_problem([1, 0, -2, 0, 1])
    sol = solve(p)
    assert sol.status == "feasible"
    assert sol.eq_residual <= 1e-6
    assert sol.t >= -1e-7
    G = p.block_values(sol.y)[0]
    x = np.linspace(-2, 2, 9)
    z = np.stack([np.ones_like(x), x, x ** 2])
    assert np.allclose(np.einsum("in,ij,jn->n", z, G, z), x ** 4 - 2 * x ** 2 + 1, atol=1e-6)


def test_negative_quadratic_is_infeasible_with_witness():
    pairs = [(0, 0), (0, 1), (1, 1)]
    A = np.array([sym(i, j, 2) for i, j in pairs])
    eq = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 1.0]])
    p = SdpProblem(3, [(np.zeros((2, 2)), A)], eq, np.array([-1.0, 0, -1.0]))
    sol = solve(p)
    assert sol.status == "infeasible"
    assert sol.witness["kind"] == "dual-psd" and sol.witness["bound"] < 0
    X = np.array(sol.witness["blocks"][0])
    assert min_eigenvalue(X) >= -1e-8


def test_constant_negative_block():
    sol = solve(SdpProblem(0, [(-np.eye(1), np.zeros((0, 1, 1)))]))
    assert sol.status == "infeasible"
    assert sol.witness["bound"] == pytest.approx(-1.0, abs=1e-6)


def test_inconsistent_equalities():
    p = SdpProblem(1, [(np.zeros((1, 1)), np.ones((1, 1, 1)))], np.array([[1.0], [1.0]]), np.array([0.0, 1.0]))
    sol = solve(p)
    assert sol.status == "infeasible" and sol.witness["kind"] == "inconsistent-equalities"


def test_empty_problem_reaches_the_cap():
    sol = solve(SdpProblem(0, []))
    assert sol.t == 1.0 and sol.status == "feasible"


def test_dimension_checks():
    with pytest.raises(SdpDimensionError):
        SdpProblem(2, [(np.zeros((2, 3)), np.zeros((2, 2, 3)))])
    with pytest.raises(SdpDimensionError):
        SdpProblem(1, [(np.zeros((1, 1)), np.ones((1, 1, 1)))], np.ones((1, 2)), np.ones(1))
    with pytest.raises(ValueError):
        min_eigenvalue(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_iterates_are_deterministic():
    p = gram_problem([1, 0, -2, 0, 1])
    a, b = solve(p), solve(p)
    assert np.array_equal(a.y, b.y) and a.iterations == b.iterations


def test_dump_is_json_roundtrippable():
    import json
    doc = json.loads(gram_problem([1, 0, 0, 0, 1]).dumps())
    assert doc["m"] == 6 and len(doc["eq_b"]) == 5


@st.composite
def random_lmis(draw):
    m = draw(st.integers(1, 3))
    n = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2 ** 16))
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(draw(st.integers(1, 2))):
        C = rng.normal(size=(n, n))
        A = rng.normal(size=(m, n, n))
        blocks.append(((C + C.T) / 2, (A + A.transpose(0, 2, 1)) / 2))
    return SdpProblem(m, blocks)


@settings(max_examples=25)
@given(random_lmis())
def test_solution_invariants(p):
    sol = solve(p, SdpOptions(max_iters=150))
    recomputed = [min_eigenvalue(B) for B in p.block_values(sol.y)]
    assert np.allclose(recomputed, sol.min_eigenvalues)
    assert sol.t == pytest.approx(min(recomputed + [1.0]))
    if sol.status == "infeasible":
        assert sol.witness["bound"] < 0


@settings(max_examples=25)
@given(random_lmis())
def test_margin_matches_an_external_solver(p):
    cp = pytest.importorskip("cvxpy")
    y, t = cp.Variable(p.m), cp.Variable()
    cons = [t <= 1.0]
    for C, A in p.blocks:
        M = C + sum(y[i] * A[i] for i in range(p.m))
        cons.append((M + M.T) / 2 - t * np.eye(C.shape[0]) >> 0)
    prob = cp.Problem(cp.Maximize(t), cons)
    prob.solve(solver="CLARABEL")
    if prob.status != "optimal":
        return
    sol = solve(p, SdpOptions(max_iters=150))
    assert sol.t == pytest.approx(t.value, abs=1e-4)

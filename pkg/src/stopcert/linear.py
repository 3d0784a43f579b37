"""Linear invariants through the deterministic mean-field system.

``determinize`` replaces each transition by its probability-weighted update
with every random variable set to its mean.  For linear updates and a linear
``h`` the pre-expectation of ``h`` equals ``h`` composed with that averaged
update, so equality invariants can be found by exact coefficient matching.
They only transfer to expectations at the stopping time when the one-step
differences are bounded and the expected runtime is finite, which
``check_pdb_bound`` and ``past_bound`` establish.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import sympy

from .moments import abs_central_moment
from .poly import Monomial, Polynomial
from .preexp import (LocPoly, _inequality_verdict, initial_expectation, preexp_pts,
                     preexp_transition)
from .pts import STEP_VAR, Pts, Transition, UpdateBranch
from .report import InvariantReport


class NonLinearError(ValueError):
    pass


class PastHypothesisError(ValueError):
    """A hypothesis of the expected-runtime rule could not be established."""


@dataclass(frozen=True)
class Cdts:
    """Deterministic counterpart of a system; ``system`` has one branch per transition."""

    system: Pts
    origin: Pts


def _det_update(pts: Pts, tau: Transition) -> dict[str, Polynomial]:
    means = {n: Polynomial.constant(d.mean) for n, d in pts.randoms}
    out: dict[str, Polynomial] = {}
    for v in pts.variables:
        total = Polynomial.zero(pts.variables)
        for b in tau.branches:
            total = total + b.images[v].substitute(means) * b.probability
        out[v] = total.with_variables(pts.variables)
    return out


def determinize(pts: Pts) -> Cdts:
    """Average each transition's branches with random variables at their means."""
    transitions = []
    for t in pts.transitions:
        f = _det_update(pts, t)
        branch = UpdateBranch(Fraction(1), tuple((v, f[v]) for v in pts.variables))
        transitions.append(Transition(t.source, t.guard, (branch,), t.destination, t.label))
    system = replace(pts, randoms=(), transitions=tuple(transitions))
    return Cdts(system, pts)


# synthesis ------------------------------------------------------------------

@dataclass
class BasisElement:
    h: LocPoly
    equality: bool = True
    pdb: "PdbResult | None" = None

    @property
    def bounded(self) -> bool:
        return self.pdb is not None and self.pdb.verdict == "bounded"


@dataclass
class LinearInvariantBasis:
    cdts: Cdts
    elements: list[BasisElement]
    locations: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.elements)

    def combine(self, coeffs: Sequence[object]) -> LocPoly:
        pts = self.cdts.origin
        out = LocPoly(pts)
        for c, el in zip(coeffs, self.elements):
            out = out + el.h.scale(Fraction(c))
        return out

    def membership(self, target: LocPoly | Polynomial | str) -> list[Fraction] | None:
        """Coefficients writing ``target`` in the basis, or None when outside the span.

        A bare polynomial is compared at the initial location only.
        """
        pts = self.cdts.origin
        if isinstance(target, LocPoly):
            locs = list(self.locations)
            tgt = {l: target[l] for l in locs}
        else:
            probe = LocPoly(pts, {pts.init_loc: target})
            locs = [pts.init_loc]
            tgt = {pts.init_loc: probe[pts.init_loc]}
        rows: dict[tuple[str, Monomial], list] = {}
        for j, el in enumerate(self.elements):
            for l in locs:
                for m, c in el.h[l].terms.items():
                    rows.setdefault((l, m), [0] * len(self.elements))[j] = c
        for l in locs:
            for m in tgt[l].terms:
                rows.setdefault((l, m), [0] * len(self.elements))
        keys = list(rows)
        if not self.elements:
            return [] if all(tgt[l].is_zero() for l in locs) else None
        A = sympy.Matrix([[sympy.Rational(c.numerator, c.denominator) if isinstance(c, Fraction) else c
                           for c in rows[key]] for key in keys])
        b = sympy.Matrix([_to_rational(tgt[l].coeff(m)) for l, m in keys])
        try:
            sol, params = A.gauss_jordan_solve(b)
        except ValueError:
            return None
        sol = sol.subs({p: 0 for p in params})
        return [_to_fraction(v) for v in sol]


def _to_rational(q: Fraction):
    return sympy.Rational(q.numerator, q.denominator)


def _to_fraction(v) -> Fraction:
    v = sympy.nsimplify(v)
    return Fraction(int(v.p), int(v.q))


def _considered(pts: Pts) -> list[int]:
    return [i for i, t in enumerate(pts.transitions)
            if pts.final_loc is None or t.source != pts.final_loc]


def synth_linear_invariants(cdts: Cdts, check_pdb: bool = True) -> LinearInvariantBasis:
    """All linear ``h`` with ``h(f(x), l', k+1) = h(x, l, k)`` on every transition.

    Transitions leaving the final location are ignored: invariants describe
    the process stopped on arrival.  Solutions that are constant everywhere
    are excluded by pinning the constant term at the initial location to 0.
    """
    sys_ = cdts.system
    xs = sys_.variables
    for t in sys_.transitions:
        for v, img in t.branches[0].update:
            if img.degree() > 1:
                raise NonLinearError(f"update of {v} on {t.name()} is not linear: {img}")
    used = _considered(sys_)
    locs = []
    for i in used:
        t = sys_.transitions[i]
        for l in (t.source, t.destination):
            if l not in locs:
                locs.append(l)
    if sys_.init_loc not in locs:
        locs.insert(0, sys_.init_loc)
    # unknowns per location: c_1..c_n, d, e
    width = len(xs) + 2
    index = {l: j * width for j, l in enumerate(locs)}
    n_unknowns = width * len(locs)
    monos = [Monomial({v: 1}) for v in xs] + [Monomial({STEP_VAR: 1}), Monomial()]
    rows: list[list[Fraction]] = []
    for i in used:
        t = sys_.transitions[i]
        f = t.branches[0].images
        s, d = index[t.source], index[t.destination]
        block = {m: [Fraction(0)] * n_unknowns for m in monos}
        for a, v in enumerate(xs):
            for m in monos:
                block[m][d + a] += f[v].coeff(m)
            block[Monomial({v: 1})][s + a] -= 1
        kd, ke = len(xs), len(xs) + 1
        block[Monomial({STEP_VAR: 1})][d + kd] += 1
        block[Monomial()][d + kd] += 1
        block[Monomial()][d + ke] += 1
        block[Monomial({STEP_VAR: 1})][s + kd] -= 1
        block[Monomial()][s + ke] -= 1
        rows.extend(block[m] for m in monos)
    pin = [Fraction(0)] * n_unknowns
    pin[index[sys_.init_loc] + len(xs) + 1] = Fraction(1)
    rows.append(pin)
    A = sympy.Matrix([[_to_rational(c) for c in row] for row in rows])
    null = A.nullspace()
    elements: list[BasisElement] = []
    if null:
        B = sympy.Matrix.hstack(*null).T.rref()[0]
        for r in range(B.rows):
            vec = [_to_fraction(B[r, c]) for c in range(B.cols)]
            if not any(vec):
                continue
            polys = {}
            for l in locs:
                o = index[l]
                p = Polynomial.zero(xs)
                for a, v in enumerate(xs):
                    p = p + Polynomial.var(v, xs) * vec[o + a]
                p = p + Polynomial.var(STEP_VAR, xs) * vec[o + len(xs)] + vec[o + len(xs) + 1]
                polys[l] = p
            h = LocPoly(cdts.origin, polys)
            elements.append(BasisElement(h))
    basis = LinearInvariantBasis(cdts, elements, tuple(locs))
    if check_pdb:
        for el in elements:
            el.pdb = check_pdb_bound(cdts.origin, el.h)
    return basis


def satisfies_identity(cdts: Cdts, h: LocPoly) -> bool:
    """Re-substitute: the deterministic pre-expectation at ``k+1`` equals ``h``."""
    sys_ = cdts.system
    for i in _considered(sys_):
        t = sys_.transitions[i]
        if not (preexp_transition(sys_, h, t, shift_step=True) - h[t.source]).is_zero():
            return False
    return True


# difference bound -----------------------------------------------------------

@dataclass(frozen=True)
class PdbResult:
    verdict: str
    K: Fraction | float | None = None
    transition: str = ""
    detail: str = ""

    def to_json(self) -> dict:
        K = self.K
        if isinstance(K, Fraction):
            K = str(K)
        return {"verdict": self.verdict, "K": K, "transition": self.transition, "detail": self.detail}


def _check_linear(h: LocPoly):
    for l, p in h.items():
        if p.degree() > 1:
            raise NonLinearError(f"h at {l} is not linear: {p}")


def check_pdb_bound(pts: Pts, h: LocPoly) -> PdbResult:
    """Bound ``|h(X', L', k+1) - h(X, L, k)|`` uniformly, or report why not.

    The bound adds the deterministic drift and, per branch, the offset of the
    branch from the averaged update plus the noise from the random variables,
    which is controlled by first absolute central moments.
    """
    _check_linear(h)
    cdts = determinize(pts)
    dists = pts.random_dists
    means = {n: Polynomial.constant(d.mean) for n, d in pts.randoms}
    xs = set(pts.variables) | {STEP_VAR}
    K: Fraction | float = Fraction(0)
    for i in _considered(pts):
        t = pts.transitions[i]
        dt = cdts.system.transitions[i]
        name = t.name(i)
        h_dst = h[t.destination].substitute({STEP_VAR: Polynomial.var(STEP_VAR) + 1})
        det_img = h_dst.substitute(dt.branches[0].images)
        D = det_img - h[t.source]
        if not D.is_constant():
            return PdbResult("unbounded-evidence", None, name, f"drift {D} depends on the state")
        noise: Fraction | float = Fraction(0)
        for b in t.branches:
            img = h_dst.substitute(b.images)
            at_mean = img.substitute(means) if means else img
            offset = at_mean - det_img
            if not offset.is_constant():
                return PdbResult("unbounded-evidence", None, name,
                                 f"branch offset {offset} depends on the state")
            rand_part = img - at_mean
            if rand_part.used_variables() & xs or rand_part.degree() > 1:
                return PdbResult("unknown", None, name,
                                 f"random part {rand_part} is not linear in the random variables alone")
            term: Fraction | float = abs(offset.constant_term())
            for r, d in dists.items():
                a = rand_part.coeff({r: 1})
                if a:
                    term = term + abs(a) * abs_central_moment(d)
            noise = noise + b.probability * term
        K = max(K, abs(D.constant_term()) + noise)
    return PdbResult("bounded", K)


# expected runtime -----------------------------------------------------------

@dataclass
class PastResult:
    bound: Fraction
    initial_expectation: Fraction
    K: Fraction
    eps: Fraction
    checks: list[str]
    assumptions: list[str]

    def to_json(self) -> dict:
        return {"bound": str(self.bound), "initial_expectation": str(self.initial_expectation),
                "K": str(self.K), "eps": str(self.eps), "checks": self.checks,
                "assumptions": self.assumptions}


def _scaled_match(lhs: Polynomial, h: Polynomial) -> tuple[Fraction, Fraction] | None:
    """``(c, d)`` with ``lhs = c*h + d`` and ``c > 0``, if such exist."""
    nonconst = [m for m in h.terms if m.degree > 0]
    if not nonconst:
        return None
    m = nonconst[0]
    c = lhs.coeff(m) / h.coeff(m)
    if c <= 0:
        return None
    rest = lhs - h * c
    if not rest.is_constant():
        return None
    return c, rest.constant_term()


def _implies_negative(t: Transition, h: Polynomial) -> bool:
    if h.is_constant():
        return h.constant_term() < 0
    for a in t.guard.atoms:
        cd = _scaled_match(a.lhs, -h)
        if cd is None:
            continue
        c, d = cd
        # c*(-h) + d >= 0 (or > 0) gives h <= d/c
        if d < 0 or (d == 0 and a.strict):
            return True
    return False


def _guard_lower_bound(t: Transition, h: Polynomial) -> Fraction | None:
    """A constant ``L`` with ``h >= L`` on the guard of ``t``, read off one atom."""
    best = None
    if h.is_constant():
        return h.constant_term()
    for a in t.guard.atoms:
        cd = _scaled_match(a.lhs, h)
        if cd is None:
            continue
        c, d = cd
        low = -d / c
        best = low if best is None else max(best, low)
    return best


def _increment_minimum(pts: Pts, t: Transition, h: LocPoly) -> Fraction | None:
    """Smallest possible ``h' - h`` over the branches of ``t``, when state-free."""
    if t.destination != t.source and h[t.destination] != h[t.source]:
        return None
    dists = pts.random_dists
    lowest = None
    for b in t.branches:
        h_dst = h[t.destination].substitute({STEP_VAR: Polynomial.var(STEP_VAR) + 1})
        inc = h_dst.substitute(b.images) - h[t.source]
        if inc.used_variables() & (set(pts.variables) | {STEP_VAR}) or inc.degree() > 1:
            return None
        value = inc.constant_term()
        for r in inc.used_variables():
            bounds = dists[r].bounds()
            if bounds is None:
                return None
            a = inc.coeff({r: 1})
            value += min(a * bounds[0], a * bounds[1])
        lowest = value if lowest is None else min(lowest, value)
    return lowest


def past_bound(pts: Pts, h: LocPoly, K, eps, assert_lower_bound: bool = False) -> PastResult:
    """Expected-runtime bound ``(E h(X0) - K) / eps`` for the loop-exit time.

    The runtime counted is the number of steps before the first configuration
    where a transition into the final location is enabled.  Hypotheses:
    (i) on every other transition leaving a non-final location the
    pre-expectation of ``h`` is at most ``h - eps``; (ii) the guard of every
    transition into the final location forces ``h < 0``; (iii) ``h >= K`` on
    every reachable state, verified from a guard atom bounding ``h`` below
    plus state-free increments with bounded support, or asserted by the
    caller through ``assert_lower_bound``.
    """
    K, eps = Fraction(K), Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    checks: list[str] = []
    assumptions: list[str] = []
    lower_ok = True
    for i in _considered(pts):
        t = pts.transitions[i]
        name = t.name(i)
        if t.destination == pts.final_loc:
            if not _implies_negative(t, h[t.source]):
                raise PastHypothesisError(f"guard of {name} does not force h < 0")
            checks.append(f"{name}: guard forces h < 0")
            continue
        diff = preexp_transition(pts, h, t, shift_step=True) - h[t.source] + eps
        verdict = _inequality_verdict(i, name, diff, t)
        if verdict.verdict != "YES":
            raise PastHypothesisError(
                f"pre-expectation does not decrease by eps on {name}: difference {diff}")
        checks.append(f"{name}: pre-expectation <= h - {eps} ({verdict.reason})")
        low = _guard_lower_bound(t, h[t.source])
        inc = _increment_minimum(pts, t, h)
        if low is None or inc is None or low + inc < K:
            lower_ok = False
        else:
            checks.append(f"{name}: h >= {low} on the guard and one step moves h by at least {inc}")
    e0 = initial_expectation(pts, h)
    init_low = _initial_minimum(pts, h)
    if init_low is None or init_low < K:
        lower_ok = False
    if not lower_ok:
        if not assert_lower_bound:
            raise PastHypothesisError(f"cannot verify h >= {K}; pass assert_lower_bound to assume it")
        assumptions.append(f"h >= {K} on reachable states (asserted by the caller)")
    else:
        checks.append(f"h >= {K} on reachable states")
    return PastResult((e0 - K) / eps, e0, K, eps, checks, assumptions)


def _initial_minimum(pts: Pts, h: LocPoly) -> Fraction | None:
    p = h[pts.init_loc].substitute({STEP_VAR: 0})
    if p.degree() > 1:
        return None
    value = p.constant_term()
    for v, d in pts.init:
        a = p.coeff({v: 1})
        if not a:
            continue
        bounds = d.bounds()
        if bounds is None:
            return None
        value += min(a * bounds[0], a * bounds[1])
    return value


# reports --------------------------------------------------------------------

def invariant_report_linear(pts: Pts, invariants, past: PastResult | str) -> list[InvariantReport]:
    """Reports for the difference-bounded equality invariants among ``invariants``.

    ``past`` is the evidence of a finite expected runtime: a :class:`PastResult`
    or a description of an external argument, recorded as an assumption.
    """
    if isinstance(invariants, LinearInvariantBasis):
        items = [(el.h, el.pdb) for el in invariants.elements]
    else:
        items = [(h, None) for h in invariants]
    if past is None or past == "":
        raise ValueError("a finite expected runtime must be established or asserted")
    cdts = determinize(pts)
    reports = []
    for h, pdb in items:
        if not satisfies_identity(cdts, h):
            continue
        pdb = pdb or check_pdb_bound(pts, h)
        if pdb.verdict != "bounded":
            continue
        e0 = initial_expectation(pts, h)
        if isinstance(past, PastResult):
            assumptions = list(past.assumptions)
            runtime = f"E(T) <= {past.bound}"
        else:
            assumptions = [f"finite expected runtime: {past}"]
            runtime = "asserted"
        seed = {l: h[l].to_str() for l in _report_locations(pts, h)}
        pieces = preexp_pts(pts, h, shift_step=True).to_json()
        init_poly = h[pts.init_loc].to_str()
        reports.append(InvariantReport(
            method="linear-PDB",
            seed=seed,
            preexp_pieces=pieces,
            martingale=f"M_k = h(X^k, L^k, k), h[{pts.init_loc}] = {init_poly}",
            precondition="PDB",
            evidence={"K": pdb.K, "runtime": runtime},
            initial_expectation=e0,
            statement=f"E(h(X^T, L^T, T)) = E(h(X^0, {pts.init_loc}, 0)) = {e0}",
            assumptions=assumptions,
        ))
    return reports


def _report_locations(pts: Pts, h: LocPoly) -> list[str]:
    return [l for l in pts.locations if not h[l].is_zero() or l == pts.init_loc]

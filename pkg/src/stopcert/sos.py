"""Sum-of-squares persistence certificates.

A certificate is a location-indexed SOS polynomial ``V`` (zero at the final
location) such that on every transition, relative to its guard,

    (1 - eps) V(x, source) - preE(V, tau)(x) - sum_j q_j(x) p_j(x) = sigma(x)

with ``q_j`` and ``sigma`` SOS and ``p_j >= 0`` the guard atoms.  Every
unknown polynomial is written in Gram form ``z^T G z``; the identities are
linear in the Gram entries and become equality rows of an SDP.  Solver output
is never trusted directly: :func:`extract_certificate` rebuilds each identity
from the numeric Gram matrices with the exact pre-expectation engine and
checks residuals and eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .poly import Monomial, Polynomial, monomials_up_to
from .preexp import LocPoly, initial_expectation, preexp_poly, preexp_pts
from .pts import Pts
from .report import InvariantReport
from .sdp import SdpOptions, SdpProblem, SdpSolution, min_eigenvalue, solve


@dataclass(frozen=True)
class Tolerances:
    psd: float = 1e-8
    res: float = 1e-6
    margin: float = 1e-7


class CertificateRejected(ValueError):
    """The solver point failed the independent numeric re-check."""


# constraint system --------------------------------------------------------------

@dataclass
class GramBlock:
    name: str
    kind: str
    basis: list[Monomial]
    offset: int
    location: str | None = None
    transition: int | None = None
    atom: int | None = None

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def n_params(self) -> int:
        return self.size * (self.size + 1) // 2

    def pairs(self):
        """``(param_index, a, b)`` for ``a <= b``."""
        k = self.offset
        for a in range(self.size):
            for b in range(a, self.size):
                yield k, a, b
                k += 1

    def matrix(self, y: np.ndarray) -> np.ndarray:
        G = np.zeros((self.size, self.size))
        for k, a, b in self.pairs():
            G[a, b] = G[b, a] = y[k]
        return G

    def poly(self, G: np.ndarray, variables: Sequence[str]) -> Polynomial:
        """``z^T G z`` with each float entry converted exactly."""
        terms: dict[Monomial, Fraction] = {}
        for a in range(self.size):
            for b in range(a, self.size):
                c = Fraction(float(G[a, b])) * (1 if a == b else 2)
                if c:
                    m = self.basis[a] * self.basis[b]
                    terms[m] = terms.get(m, Fraction(0)) + c
        return Polynomial(terms, variables)


@dataclass
class Identity:
    """``const + linear(params) == 0`` coefficient-wise, plus a recipe to rebuild it."""

    name: str
    transition: int | None
    linear: dict[Monomial, dict[int, Fraction]] = field(default_factory=dict)
    const: Polynomial | None = None
    gram_terms: list[tuple[int, Polynomial]] = field(default_factory=list)
    preexp_terms: list[tuple[int, int, Fraction]] = field(default_factory=list)

    def add(self, mono: Monomial, k: int, c: Fraction):
        if c:
            row = self.linear.setdefault(mono, {})
            row[k] = row.get(k, Fraction(0)) + c
            if not row[k]:
                del row[k]

    def monomials(self) -> set[Monomial]:
        out = set(self.linear)
        if self.const is not None:
            out |= set(self.const.terms)
        return out


@dataclass
class SosSystem:
    variables: tuple[str, ...]
    blocks: list[GramBlock]
    identities: list[Identity]
    normalization: list[tuple[dict[int, Fraction], Fraction]]
    pts: Pts | None = None
    eps: Fraction = Fraction(0)
    degree: int = 0
    homogeneous: bool = False
    fixed_V: LocPoly | None = None

    @property
    def n_params(self) -> int:
        return sum(b.n_params for b in self.blocks)

    def v_blocks(self) -> list[GramBlock]:
        return [b for b in self.blocks if b.kind == "V"]


class _Builder:
    def __init__(self, variables: Sequence[str]):
        self.variables = tuple(variables)
        self.blocks: list[GramBlock] = []
        self.offset = 0

    def block(self, name, kind, basis, **kw) -> int:
        blk = GramBlock(name, kind, list(basis), self.offset, **kw)
        self.offset += blk.n_params
        self.blocks.append(blk)
        return len(self.blocks) - 1

    def add_gram(self, ident: Identity, bi: int, mult: Polynomial):
        """Add ``mult * z^T G z`` for block ``bi``."""
        blk = self.blocks[bi]
        for k, a, b in blk.pairs():
            base = blk.basis[a] * blk.basis[b]
            scale = 1 if a == b else 2
            for m, c in mult.terms.items():
                ident.add(base * m, k, c * scale)
        ident.gram_terms.append((bi, mult))


def _deg_range(polys: Sequence[Polynomial]) -> tuple[int, int]:
    degs = [m.degree for p in polys for m in p.terms]
    if not degs:
        return 0, 0
    return min(degs), max(degs)


def _even_up(n: int) -> int:
    return n + (n % 2)


def _add_multipliers_and_residual(bld: _Builder, ident: Identity, atoms: Sequence[Polynomial],
                                  lo: int, hi: int, tag: str, tau: int | None):
    hi = _even_up(hi)
    xs = bld.variables
    mults = []
    for j, p in enumerate(atoms):
        dq = hi - p.degree()
        dq -= dq % 2
        if dq < 0 or p.is_constant():
            continue
        mults.append((j, p, dq))
    if mults:
        lo = 0
    for j, p, dq in mults:
        bi = bld.block(f"q[{tag},{j}]", "multiplier", monomials_up_to(xs, dq // 2),
                       transition=tau, atom=j)
        bld.add_gram(ident, bi, -p)
    lo_half = (lo + 1) // 2
    bi = bld.block(f"sigma[{tag}]", "residual", monomials_up_to(xs, hi // 2, lo_half), transition=tau)
    bld.add_gram(ident, bi, Polynomial.constant(-1, xs))


def build_constraints(pts: Pts, degree: int, eps, homogeneous: bool = False,
                      fixed_V: LocPoly | None = None) -> SosSystem:
    """Constraint system for a persistence certificate of the given even degree.

    With ``fixed_V`` the polynomial ``V`` is known and only multipliers and
    residuals are unknown; otherwise ``V`` gets one Gram block per non-final
    location and ``trace(G_{l0}) = 1`` rules out ``V = 0``.  Strict guard
    atoms are treated as non-strict.
    """
    if degree < 2 or degree % 2:
        raise ValueError("degree must be an even integer >= 2")
    eps = Fraction(eps)
    xs = pts.variables
    bld = _Builder(xs)
    locs = [l for l in pts.locations if l != pts.final_loc]
    vblock: dict[str, int] = {}
    if fixed_V is None:
        lo_deg = degree // 2 if homogeneous else 0
        basis = monomials_up_to(xs, degree // 2, lo_deg)
        for l in locs:
            vblock[l] = bld.block(f"V[{l}]", "V", basis, location=l)
    else:
        if pts.final_loc is not None and not fixed_V[pts.final_loc].is_zero():
            raise ValueError("V must vanish at the final location")

    identities = []
    for i, t in enumerate(pts.transitions):
        if t.source == pts.final_loc:
            continue
        ident = Identity(t.name(i), i)
        atoms = [a.lhs for a in t.guard.atoms]
        if fixed_V is None:
            bld.add_gram(ident, vblock[t.source], Polynomial.constant(1 - eps, xs))
            blk_src = bld.blocks[vblock[t.source]]
            spans = [Polynomial({blk_src.basis[a] * blk_src.basis[b]: 1}, xs)
                     for _, a, b in blk_src.pairs()]
            if t.destination != pts.final_loc:
                bi = vblock[t.destination]
                blk = bld.blocks[bi]
                for k, a, b in blk.pairs():
                    zz = Polynomial({blk.basis[a] * blk.basis[b]: 1}, xs)
                    pe = preexp_poly(pts, zz, t)
                    spans.append(pe)
                    scale = 1 if a == b else 2
                    for m, c in pe.terms.items():
                        ident.add(m, k, -c * scale)
                ident.preexp_terms.append((bi, i, Fraction(-1)))
            lo, hi = _deg_range(spans)
            hi = max(hi, degree)
        else:
            const = fixed_V[t.source] * (1 - eps) - preexp_poly(pts, fixed_V[t.destination], t)
            ident.const = const
            lo, hi = _deg_range([const])
        _add_multipliers_and_residual(bld, ident, atoms, lo, hi, ident.name, i)
        identities.append(ident)

    normalization = []
    if fixed_V is None:
        blk = bld.blocks[vblock[pts.init_loc]]
        row = {k: Fraction(1) for k, a, b in blk.pairs() if a == b}
        normalization.append((row, Fraction(1)))
    return SosSystem(xs, bld.blocks, identities, normalization, pts, eps, degree,
                     homogeneous, fixed_V)


def build_membership(target: Polynomial, atoms: Sequence[Polynomial] = (),
                     variables: Sequence[str] | None = None) -> SosSystem:
    """System for ``target - sum_j q_j p_j = sigma`` with SOS ``q_j`` and ``sigma``."""
    xs = tuple(variables) if variables is not None else tuple(
        v for v in target.variables if v in target.used_variables()
        or any(v in a.used_variables() for a in atoms))
    target = target.with_variables(xs)
    bld = _Builder(xs)
    ident = Identity("membership", None, const=target)
    lo, hi = _deg_range([target])
    _add_multipliers_and_residual(bld, ident, [a.with_variables(xs) for a in atoms], lo, hi,
                                  "0", None)
    return SosSystem(xs, bld.blocks, [ident], [])


def compile_to_sdp(sys: SosSystem) -> SdpProblem:
    """Gram blocks become PSD blocks; coefficient matching gives the equalities."""
    m = sys.n_params
    blocks = []
    for blk in sys.blocks:
        A = np.zeros((m, blk.size, blk.size))
        for k, a, b in blk.pairs():
            A[k, a, b] = A[k, b, a] = 1.0
        blocks.append((np.zeros((blk.size, blk.size)), A))
    rows, rhs = [], []
    for ident in sys.identities:
        for mono in sorted(ident.monomials(), key=lambda mm: mm.grlex_key(sys.variables)):
            row = np.zeros(m)
            for k, c in ident.linear.get(mono, {}).items():
                row[k] = float(c)
            rows.append(row)
            rhs.append(-float(ident.const.coeff(mono)) if ident.const is not None else 0.0)
    for coeffs, b in sys.normalization:
        row = np.zeros(m)
        for k, c in coeffs.items():
            row[k] = float(c)
        rows.append(row)
        rhs.append(float(b))
    eq_A = np.array(rows) if rows else np.zeros((0, m))
    return SdpProblem(m, blocks, eq_A, np.array(rhs), [b.name for b in sys.blocks])


def identity_row_count(sys: SosSystem) -> int:
    return sum(len(ident.monomials()) for ident in sys.identities)


# certificates -------------------------------------------------------------------

@dataclass
class SosCertificate:
    eps: Fraction
    degree: int
    homogeneous: bool
    V: dict[str, Polynomial]
    grams: dict[str, np.ndarray]
    bases: dict[str, list[Monomial]]
    summands: dict[str, list[Polynomial]]
    aux: list[dict]
    verification: dict
    variables: tuple[str, ...] = ()

    @property
    def alpha(self) -> Fraction:
        return 1 - self.eps

    def V_locpoly(self, pts: Pts) -> LocPoly:
        return LocPoly(pts, self.V)

    def to_json(self) -> dict:
        return {
            "schema": "stopcert-cert/1",
            "eps": str(self.eps),
            "alpha_effective": str(self.alpha),
            "degree": self.degree,
            "homogeneous": self.homogeneous,
            "V": {l: p.to_str(decimal=True) for l, p in self.V.items()},
            "locations": {
                l: {"basis": [m.to_str() or "1" for m in self.bases[l]],
                    "gram": [[repr(float(v)) for v in row] for row in self.grams[l]],
                    "summands": [s.to_str(decimal=True) for s in self.summands.get(l, [])]}
                for l in self.grams},
            "multipliers_and_residuals": [
                {"name": a["name"], "basis": [m.to_str() or "1" for m in a["basis"]],
                 "gram": [[repr(float(v)) for v in row] for row in a["gram"]]}
                for a in self.aux],
            "verification": self.verification,
        }


def _summands(G: np.ndarray, basis: list[Monomial], variables, tol_psd: float) -> list[Polynomial]:
    lam, Q = np.linalg.eigh((G + G.T) / 2)
    out = []
    for i in range(len(lam) - 1, -1, -1):
        if lam[i] <= tol_psd:
            continue
        vec = np.sqrt(lam[i]) * Q[:, i]
        j = int(np.argmax(np.abs(vec)))
        if vec[j] < 0:
            vec = -vec
        terms = {basis[a]: Fraction(f"{vec[a]:.12g}") for a in range(len(basis)) if abs(vec[a]) > 1e-14}
        out.append(Polynomial(terms, variables))
    return out


def identity_residuals(sys: SosSystem, grams: Sequence[np.ndarray]) -> list[float]:
    """Max coefficient of each identity rebuilt from Gram matrices and exact pre-expectations."""
    xs = sys.variables
    polys = [blk.poly(G, xs) for blk, G in zip(sys.blocks, grams)]
    out = []
    for ident in sys.identities:
        total = ident.const if ident.const is not None else Polynomial.zero(xs)
        for bi, mult in ident.gram_terms:
            total = total + polys[bi] * mult
        for bi, ti, sign in ident.preexp_terms:
            total = total + preexp_poly(sys.pts, polys[bi], sys.pts.transitions[ti]) * sign
        out.append(max((abs(float(c)) for c in total.terms.values()), default=0.0))
    return out


def extract_certificate(sys: SosSystem, sol: SdpSolution, tol: Tolerances = Tolerances()) -> SosCertificate:
    """Factor the V Gram matrices and re-verify every identity numerically."""
    if sol.status != "feasible" or sol.t < -tol.margin:
        raise CertificateRejected(f"solver status {sol.status} with margin {sol.t:.3g}")
    grams = [blk.matrix(sol.y) for blk in sys.blocks]
    mins = [min_eigenvalue(G) if G.size else float("inf") for G in grams]
    bad = [blk.name for blk, lo in zip(sys.blocks, mins) if lo < -tol.psd]
    if bad:
        raise CertificateRejected(f"Gram blocks not PSD within tolerance: {bad}")
    residuals = identity_residuals(sys, grams)
    worst = max(residuals, default=0.0)
    if worst > tol.res:
        raise CertificateRejected(f"identity residual {worst:.3g} exceeds {tol.res:g}")
    xs = sys.variables
    V, Gv, bases, summ = {}, {}, {}, {}
    if sys.fixed_V is not None:
        for l in sys.pts.locations:
            V[l] = sys.fixed_V[l]
    else:
        for blk, G in zip(sys.blocks, grams):
            if blk.kind != "V":
                continue
            V[blk.location] = blk.poly(G, xs)
            Gv[blk.location] = G
            bases[blk.location] = blk.basis
            summ[blk.location] = _summands(G, blk.basis, xs, tol.psd)
        if sys.pts is not None and sys.pts.final_loc is not None:
            V[sys.pts.final_loc] = Polynomial.zero(xs)
    aux = [{"name": blk.name, "basis": blk.basis, "gram": G}
           for blk, G in zip(sys.blocks, grams) if blk.kind != "V"]
    verification = {
        "margin": sol.t,
        "min_eigenvalues": {blk.name: lo for blk, lo in zip(sys.blocks, mins) if blk.size},
        "identity_residuals": {ident.name: r for ident, r in zip(sys.identities, residuals)},
        "tol_psd": tol.psd, "tol_res": tol.res, "tol_margin": tol.margin,
        "solver_iterations": sol.iterations,
    }
    return SosCertificate(sys.eps, sys.degree, sys.homogeneous, V, Gv, bases, summ, aux,
                          verification, xs)


@dataclass
class SynthesisResult:
    status: str
    certificate: SosCertificate | None
    solution: SdpSolution
    system: SosSystem
    reason: str = ""


def synthesize(pts: Pts, degree: int, eps, homogeneous: bool = False,
               tol: Tolerances = Tolerances(), opts: SdpOptions | None = None) -> SynthesisResult:
    """Build, solve and verify; status is feasible, infeasible, rejected or max-iterations."""
    sys = build_constraints(pts, degree, eps, homogeneous)
    return _run(sys, tol, opts)


def _run(sys: SosSystem, tol: Tolerances, opts: SdpOptions | None) -> SynthesisResult:
    opts = opts or SdpOptions(tol_margin=tol.margin)
    sol = solve(compile_to_sdp(sys), opts)
    if sol.status == "infeasible":
        return SynthesisResult("infeasible", None, sol, sys, "dual certificate of infeasibility")
    if sol.status != "feasible":
        return SynthesisResult(sol.status, None, sol, sys, "solver did not converge")
    if sol.t < -tol.margin:
        return SynthesisResult("infeasible", None, sol, sys, f"optimal margin {sol.t:.3g} is negative")
    try:
        cert = extract_certificate(sys, sol, tol)
    except CertificateRejected as exc:
        return SynthesisResult("rejected", None, sol, sys, str(exc))
    return SynthesisResult("feasible", cert, sol, sys)


@dataclass
class VerificationResult:
    ok: bool
    reason: str
    certificate: SosCertificate | None = None
    margin: float | None = None
    residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ok": self.ok, "reason": self.reason, "margin": self.margin,
                "residuals": self.residuals,
                "certificate": self.certificate.to_json() if self.certificate else None}


def verify_certificate(pts: Pts, V: LocPoly, eps, tol: Tolerances = Tolerances(),
                       opts: SdpOptions | None = None) -> VerificationResult:
    """Check a given ``V``: SOS at every location and the decrease identity on every transition."""
    eps = Fraction(eps)
    for l in pts.locations:
        if l == pts.final_loc:
            if not V[l].is_zero():
                return VerificationResult(False, f"V is not zero at the final location {l}")
            continue
        mem = check_sos_membership(V[l], tol)
        if not mem.is_sos:
            return VerificationResult(False, f"V at {l} is not SOS (margin {mem.margin})")
    degree = max(2, _even_up(max(V[l].degree() for l in pts.locations)))
    sys = build_constraints(pts, degree, eps, fixed_V=V)
    res = _run(sys, tol, opts)
    if res.certificate is None:
        return VerificationResult(False, res.reason or res.status, None, res.solution.t)
    cert = res.certificate
    return VerificationResult(True, "verified", cert, res.solution.t,
                              cert.verification["identity_residuals"])


# single polynomials ---------------------------------------------------------------

@dataclass
class SosMembership:
    is_sos: bool
    margin: float | None
    basis: list[Monomial] = field(default_factory=list)
    gram: np.ndarray | None = None
    residual: float | None = None


def check_sos_membership(q: Polynomial, tol: Tolerances = Tolerances()) -> SosMembership:
    """Gram-matrix test for ``q`` being a sum of squares."""
    if q.is_zero():
        return SosMembership(True, 0.0, [], np.zeros((0, 0)), 0.0)
    if q.degree() % 2:
        return SosMembership(False, None)
    sys = build_membership(q)
    res = _run(sys, tol, None)
    blk = sys.blocks[-1]
    if res.certificate is None:
        return SosMembership(False, res.solution.t, blk.basis)
    G = blk.matrix(res.solution.y)
    r = res.certificate.verification["identity_residuals"]["membership"]
    return SosMembership(True, res.solution.t, blk.basis, G, r)


def certify_nonnegative_on(q: Polynomial, atoms: Sequence[Polynomial],
                           tol: Tolerances = Tolerances()) -> SosCertificate | None:
    """A certificate that ``q >= 0`` wherever every atom is ``>= 0``, or None."""
    if q.is_zero():
        return None
    if q.degree() % 2 and not atoms:
        return None
    sys = build_membership(q, atoms)
    return _run(sys, tol, None).certificate


# martingales ------------------------------------------------------------------

def domination_constant(P: Polynomial, G: np.ndarray, basis: list[Monomial],
                        tol: float = 1e-5) -> float | None:
    """Smallest ``c`` with ``P^2 <= c * z^T G z`` from ``P = u^T z``, or None."""
    index = {m: i for i, m in enumerate(basis)}
    u = np.zeros(len(basis))
    for m, c in P.terms.items():
        if m not in index:
            return None
        u[index[m]] = float(c)
    if not u.any():
        return 0.0
    Gp = np.linalg.pinv(G, rcond=1e-9, hermitian=True)
    proj = G @ Gp @ u
    if np.max(np.abs(proj - u)) > tol * max(1.0, np.max(np.abs(u))):
        return None
    return float(u @ Gp @ u)


def doob_invariant(pts: Pts, P: LocPoly, certificate: SosCertificate) -> InvariantReport:
    """Closed-form Doob martingale of ``P`` with the certificate as dominating evidence.

    ``P`` must be dominated by the certificate's ``V``: ``P^2 <= c V`` at every
    location, which holds for its summands with ``c = 1``.
    """
    consts = {}
    for l in pts.locations:
        if l == pts.final_loc:
            if not P[l].is_zero():
                raise ValueError("P must vanish at the final location")
            continue
        if l not in certificate.grams:
            raise ValueError(f"certificate has no Gram matrix at {l}")
        c = domination_constant(P[l], certificate.grams[l], certificate.bases[l])
        if c is None:
            raise ValueError(f"P at {l} is not dominated by the certificate's V")
        consts[l] = c
    pieces = preexp_pts(pts, P)
    out = []
    for pc in pieces.pieces:
        corr = P[pc.location] - pc.poly
        out.append({"location": pc.location, "guard": pc.guard.to_str(), "preexp": pc.poly.to_str(),
                    "correction": corr.to_str(), "transition": pc.transition})
    e0 = initial_expectation(pts, P)
    body = "; ".join(f"[{d['location']}: {d['guard']}] {d['correction']}" for d in out)
    return InvariantReport(
        method="sos-IUD",
        seed=P.to_json(),
        preexp_pieces=out,
        martingale=f"M_k = P(X^k, L^k) + sum_{{i<k}} D(X^i, L^i) with D = P - preE(P): {body}",
        precondition="IUD",
        evidence={"certificate_alpha": certificate.alpha, "domination": max(consts.values(), default=0.0)},
        initial_expectation=e0,
        statement=f"E(M_T) = E(P(X^0, {pts.init_loc})) = {e0} for every stopping time T",
    )

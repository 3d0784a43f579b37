"""Symbolic pre-expectations by moment substitution.

The pre-expectation of a location-indexed polynomial ``h`` along a transition
is the branch-weighted expectation of ``h`` at the destination, after the
update.  Substituting the update into ``h`` and replacing every power of a
random variable by its raw moment gives it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

from .moments import moment_substitute
from .poly import Polynomial, parse_polynomial
from .pts import STEP_VAR, Guard, Pts, Transition


class LocPoly(Mapping[str, Polynomial]):
    """One polynomial per location, over the program variables and optionally ``k``.

    Strings are parsed; names of the system's parameters are replaced by their values.
    """

    def __init__(self, pts: Pts, polys: Mapping[str, Polynomial | object] | Polynomial | None = None,
                 default: Polynomial | object | None = 0):
        universe = pts.variables
        entries: dict[str, Polynomial] = {}
        if isinstance(polys, (Polynomial, str)):
            polys = {loc: polys for loc in pts.locations}
        polys = dict(polys or {})
        unknown = set(polys) - set(pts.locations)
        if unknown:
            raise KeyError(f"unknown locations {sorted(unknown)}")
        allowed = set(pts.variables) | {STEP_VAR}
        for loc in pts.locations:
            value = polys.get(loc, default)
            if value is None:
                raise KeyError(f"no polynomial for location {loc!r}")
            if isinstance(value, str):
                # system parameters may appear by name and take their bound values
                params = dict(pts.params)
                value = parse_polynomial(value, tuple(universe) + (STEP_VAR,) + tuple(params))
                if params:
                    value = value.substitute(params)
            if not isinstance(value, Polynomial):
                value = Polynomial.constant(value, universe)
            extra = value.used_variables() - allowed
            if extra:
                raise ValueError(f"polynomial at {loc!r} mentions {sorted(extra)}")
            entries[loc] = value.with_variables(universe)
        self._entries = entries
        self.pts = pts

    def __getitem__(self, loc: str) -> Polynomial:
        return self._entries[loc]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def uses_step(self) -> bool:
        return any(STEP_VAR in p.used_variables() for p in self._entries.values())

    def map(self, fn) -> "LocPoly":
        return LocPoly(self.pts, {loc: fn(p) for loc, p in self._entries.items()})

    def __add__(self, other: "LocPoly") -> "LocPoly":
        return LocPoly(self.pts, {l: self[l] + other[l] for l in self})

    def __sub__(self, other: "LocPoly") -> "LocPoly":
        return LocPoly(self.pts, {l: self[l] - other[l] for l in self})

    def scale(self, c) -> "LocPoly":
        return self.map(lambda p: p * Fraction(c))

    def __eq__(self, other):
        if isinstance(other, LocPoly):
            return dict(self._entries) == dict(other._entries)
        return NotImplemented

    def __repr__(self):
        body = ", ".join(f"{l}: {p}" for l, p in self._entries.items())
        return f"LocPoly({body})"

    def to_json(self) -> dict[str, str]:
        return {l: p.to_str() for l, p in self._entries.items()}


@dataclass(frozen=True)
class Piece:
    guard: Guard
    location: str
    poly: Polynomial
    transition: int

    def to_str(self) -> str:
        return f"[{self.location}] {self.guard.to_str()} -> {self.poly.to_str()}"


@dataclass(frozen=True)
class PiecewisePoly:
    pieces: tuple[Piece, ...]

    def at(self, location: str, point: Mapping[str, object]):
        """Value of the unique piece enabled at ``(location, point)``."""
        hits = [pc for pc in self.pieces if pc.location == location and pc.guard.holds(point)]
        if len(hits) != 1:
            raise ValueError(f"{len(hits)} pieces enabled at {location}")
        return hits[0].poly.evaluate(point)

    def to_json(self) -> list[dict]:
        return [{"location": pc.location, "guard": pc.guard.to_str(),
                 "poly": pc.poly.to_str(), "transition": pc.transition} for pc in self.pieces]


def _step_shift(p: Polynomial) -> Polynomial:
    if STEP_VAR not in p.used_variables():
        return p
    return p.substitute({STEP_VAR: Polynomial.var(STEP_VAR) + 1})


def preexp_poly(pts: Pts, h_dst: Polynomial, tau: Transition, shift_step: bool = False) -> Polynomial:
    """Pre-expectation of a single polynomial placed at ``tau``'s destination."""
    if shift_step:
        h_dst = _step_shift(h_dst)
    dists = pts.random_dists
    total = Polynomial.zero(pts.variables)
    for b in tau.branches:
        image = h_dst.substitute(b.images)
        total = total + moment_substitute(image, dists) * b.probability
    return total.with_variables(pts.variables)


def preexp_transition(pts: Pts, h: LocPoly, tau: Transition, shift_step: bool = False) -> Polynomial:
    """Expected value of ``h`` after taking ``tau``, as a polynomial in the pre-state.

    With ``shift_step`` the step variable ``k`` is replaced by ``k + 1`` first.
    """
    return preexp_poly(pts, h[tau.destination], tau, shift_step)


def preexp_pts(pts: Pts, h: LocPoly, shift_step: bool = False) -> PiecewisePoly:
    return PiecewisePoly(tuple(
        Piece(t.guard, t.source, preexp_transition(pts, h, t, shift_step), i)
        for i, t in enumerate(pts.transitions)))


@dataclass(frozen=True)
class TransitionVerdict:
    transition: int
    name: str
    difference: Polynomial
    verdict: str
    reason: str = ""

    def to_json(self) -> dict:
        return {"transition": self.transition, "name": self.name,
                "difference": self.difference.to_str(), "verdict": self.verdict,
                "reason": self.reason}


def check_supermartingale(pts: Pts, h: LocPoly, mode: str = "equality",
                          shift_step: bool = False,
                          transitions: Sequence[int] | None = None) -> list[TransitionVerdict]:
    """Decide, per transition, whether pre-expectation minus ``h`` is zero or nonpositive.

    ``equality`` is exact.  ``inequality`` answers YES for a nonpositive
    constant difference or when the negated difference has a sum-of-squares
    certificate relative to the guard, and UNKNOWN otherwise.
    """
    if mode not in ("equality", "inequality"):
        raise ValueError("mode must be 'equality' or 'inequality'")
    out = []
    indices = range(len(pts.transitions)) if transitions is None else transitions
    for i in indices:
        t = pts.transitions[i]
        diff = preexp_transition(pts, h, t, shift_step) - h[t.source]
        name = t.name(i)
        if mode == "equality":
            out.append(TransitionVerdict(i, name, diff, "YES" if diff.is_zero() else "NO"))
            continue
        out.append(_inequality_verdict(i, name, diff, t))
    return out


def _inequality_verdict(i: int, name: str, diff: Polynomial, t: Transition) -> TransitionVerdict:
    if diff.is_constant():
        c = diff.constant_term()
        if c <= 0:
            return TransitionVerdict(i, name, diff, "YES", "nonpositive constant")
        return TransitionVerdict(i, name, diff, "NO", "positive constant")
    if STEP_VAR in diff.used_variables():
        return TransitionVerdict(i, name, diff, "UNKNOWN", "difference depends on the step counter")
    from .sos import certify_nonnegative_on

    cert = certify_nonnegative_on(-diff, [a.lhs for a in t.guard.atoms])
    if cert is not None:
        return TransitionVerdict(i, name, diff, "YES", "sum-of-squares certificate on the guard")
    return TransitionVerdict(i, name, diff, "UNKNOWN", "no certificate found")


def initial_expectation(pts: Pts, h: LocPoly | Polynomial) -> Fraction:
    """E h(X0, l0, 0), with moments of the initial distribution."""
    poly = h[pts.init_loc] if isinstance(h, LocPoly) else h
    if STEP_VAR in poly.used_variables():
        poly = poly.substitute({STEP_VAR: 0})
    value = moment_substitute(poly, pts.init_dists)
    if not value.is_constant():
        raise ValueError("initial expectation left free variables")
    return value.constant_term()

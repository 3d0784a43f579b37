"""Sparse multivariate polynomials with exact rational coefficients.

Polynomials are immutable.  A monomial is a tuple of ``(variable, exponent)``
pairs sorted by variable name; zero exponents are never stored.  Every
polynomial also carries an ordered *variable universe* which fixes the
graded-lexicographic order used for printing and for building monomial bases.

Text grammar (whitespace is ignored)::

    expr   := term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := '-' factor | base ('^' uint)?
    base   := rational | ident | '(' expr ')'
    rational := digits ['/' digits] | digits '.' digits

Decimal literals are read exactly (``0.05`` is ``1/20``).  ``**`` is accepted
as a synonym for ``^``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence, Union

Number = Union[int, Fraction]


class PolynomialSyntaxError(ValueError):
    """Raised for malformed polynomial or inequality text."""

    def __init__(self, message: str, text: str = "", pos: int | None = None):
        self.text = text
        self.pos = pos
        if pos is not None:
            message = f"{message} at position {pos}: {text!r}"
        super().__init__(message)


class UnknownIdentifierError(PolynomialSyntaxError):
    pass


class Monomial(tuple):
    """Product of variables; a sorted tuple of ``(name, exponent)`` pairs."""

    __slots__ = ()

    def __new__(cls, powers: Mapping[str, int] | Iterable[tuple[str, int]] = ()):
        items = powers.items() if isinstance(powers, Mapping) else powers
        merged: dict[str, int] = {}
        for var, exp in items:
            if exp < 0:
                raise ValueError(f"negative exponent for {var}")
            if exp:
                merged[var] = merged.get(var, 0) + exp
        return super().__new__(cls, sorted(merged.items()))

    @property
    def degree(self) -> int:
        return sum(e for _, e in self)

    def exponent(self, var: str) -> int:
        for v, e in self:
            if v == var:
                return e
        return 0

    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self)

    def __mul__(self, other: "Monomial") -> "Monomial":  # type: ignore[override]
        if not self:
            return other
        if not other:
            return self
        return Monomial(list(self) + list(other))

    def without(self, names: Iterable[str]) -> "Monomial":
        drop = set(names)
        return Monomial((v, e) for v, e in self if v not in drop)

    def grlex_key(self, order: Sequence[str]) -> tuple:
        """Sort key; larger key means larger in graded-lex order."""
        exps = dict(self)
        extra = sorted(v for v in exps if v not in order)
        return (self.degree, tuple(exps.get(v, 0) for v in list(order) + extra))

    def to_str(self) -> str:
        return "*".join(v if e == 1 else f"{v}^{e}" for v, e in self)

    def __repr__(self) -> str:
        return f"Monomial({self.to_str() or '1'})"


ONE = Monomial()


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, float):
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as a coefficient")


def _merge_vars(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    if tuple(a) == tuple(b):
        return tuple(a)
    seen = list(a)
    for v in b:
        if v not in seen:
            seen.append(v)
    return tuple(seen)


class Polynomial:
    """Immutable sparse polynomial over the rationals."""

    __slots__ = ("terms", "variables", "_hash")

    def __init__(self, terms: Mapping[Monomial, object] | None = None,
                 variables: Sequence[str] = ()):
        clean: dict[Monomial, Fraction] = {}
        used: list[str] = []
        for mono, c in (terms or {}).items():
            if not isinstance(mono, Monomial):
                mono = Monomial(mono)
            c = _as_fraction(c)
            if c:
                clean[mono] = clean.get(mono, Fraction(0)) + c
                if not clean[mono]:
                    del clean[mono]
        for mono in clean:
            for v in mono.variables():
                if v not in used:
                    used.append(v)
        self.terms = clean
        self.variables = _merge_vars(tuple(variables), sorted(used))
        self._hash = None

    # constructors -------------------------------------------------------
    @classmethod
    def _raw(cls, terms: dict[Monomial, Fraction], variables: tuple[str, ...]) -> "Polynomial":
        obj = cls.__new__(cls)
        obj.terms = terms
        obj.variables = variables
        obj._hash = None
        return obj

    @classmethod
    def constant(cls, c, variables: Sequence[str] = ()) -> "Polynomial":
        c = _as_fraction(c)
        return cls._raw({ONE: c} if c else {}, tuple(variables))

    @classmethod
    def var(cls, name: str, variables: Sequence[str] = ()) -> "Polynomial":
        vs = tuple(variables) if name in variables else tuple(variables) + (name,)
        return cls._raw({Monomial({name: 1}): Fraction(1)}, vs)

    @classmethod
    def zero(cls, variables: Sequence[str] = ()) -> "Polynomial":
        return cls._raw({}, tuple(variables))

    def with_variables(self, variables: Sequence[str]) -> "Polynomial":
        return Polynomial._raw(dict(self.terms), _merge_vars(tuple(variables), self.variables))

    # queries ------------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return not self.terms or (len(self.terms) == 1 and ONE in self.terms)

    def constant_term(self) -> Fraction:
        return self.terms.get(ONE, Fraction(0))

    def coeff(self, mono: Monomial | Mapping[str, int]) -> Fraction:
        if not isinstance(mono, Monomial):
            mono = Monomial(mono)
        return self.terms.get(mono, Fraction(0))

    def degree(self, among: Iterable[str] | None = None) -> int:
        """Total degree, or the degree in the listed variables only."""
        if not self.terms:
            return -1
        if among is None:
            return max(m.degree for m in self.terms)
        names = set(among)
        return max(sum(e for v, e in m if v in names) for m in self.terms)

    def used_variables(self) -> set[str]:
        return {v for m in self.terms for v in m.variables()}

    def monomials(self) -> list[Monomial]:
        """Monomials in descending graded-lex order."""
        order = self.variables
        return sorted(self.terms, key=lambda m: m.grlex_key(order), reverse=True)

    # arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, (int, Fraction)):
            return Polynomial.constant(other, self.variables)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for m, c in other.terms.items():
            s = terms.get(m, 0) + c
            if s:
                terms[m] = s
            else:
                terms.pop(m, None)
        return Polynomial._raw(terms, _merge_vars(self.variables, other.variables))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw({m: -c for m, c in self.terms.items()}, self.variables)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            if not other:
                return Polynomial.zero(self.variables)
            return Polynomial._raw({m: c * other for m, c in self.terms.items()}, self.variables)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = m1 * m2
                s = terms.get(m, 0) + c1 * c2
                if s:
                    terms[m] = s
                else:
                    terms.pop(m, None)
        return Polynomial._raw(terms, _merge_vars(self.variables, other.variables))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return self * (Fraction(1) / Fraction(other))
        return NotImplemented

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("polynomial exponent must be a nonnegative integer")
        result = Polynomial.constant(1, self.variables)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.is_constant() and self.constant_term() == other
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.terms.items()))
        return self._hash

    # transformations ----------------------------------------------------
    def substitute(self, bindings: Mapping[str, "Polynomial | Number"]) -> "Polynomial":
        return substitute(self, bindings)

    def evaluate(self, point: Mapping[str, object]):
        return evaluate(self, point)

    def map_coefficients(self, fn) -> "Polynomial":
        return Polynomial({m: fn(c) for m, c in self.terms.items()}, self.variables)

    def split_by(self, names: Iterable[str]) -> dict[Monomial, "Polynomial"]:
        """Group terms by their monomial in ``names``; values hold the rest."""
        names = set(names)
        groups: dict[Monomial, dict[Monomial, Fraction]] = {}
        for m, c in self.terms.items():
            key = Monomial((v, e) for v, e in m if v in names)
            rest = Monomial((v, e) for v, e in m if v not in names)
            groups.setdefault(key, {})[rest] = c
        return {k: Polynomial._raw(v, self.variables) for k, v in groups.items()}

    # printing -----------------------------------------------------------
    def to_str(self, decimal: bool = False) -> str:
        if not self.terms:
            return "0"
        parts = []
        for i, m in enumerate(self.monomials()):
            c = self.terms[m]
            sign = "-" if c < 0 else "+"
            a = -c if c < 0 else c
            if decimal:
                cs = repr(float(a))
            else:
                cs = str(a.numerator) if a.denominator == 1 else f"{a.numerator}/{a.denominator}"
            ms = m.to_str()
            if not ms:
                body = cs
            elif a == 1:
                body = ms
            else:
                body = f"{cs}*{ms}"
            if i == 0:
                parts.append(body if sign == "+" else f"-{body}")
            else:
                parts.append(f" {sign} {body}")
        return "".join(parts)

    def __str__(self):
        return self.to_str()

    def __repr__(self):
        return f"Polynomial({self.to_str()!r})"


def substitute(p: Polynomial, bindings: Mapping[str, Polynomial | Number]) -> Polynomial:
    """Replace each bound variable of ``p`` by its image and expand."""
    images: dict[str, Polynomial] = {}
    universe = p.variables
    for v, img in bindings.items():
        img = img if isinstance(img, Polynomial) else Polynomial.constant(img)
        images[v] = img
        universe = _merge_vars(universe, img.variables)
    universe = tuple(v for v in universe if v not in images or any(v in i.variables for i in images.values()))
    powers: dict[tuple[str, int], Polynomial] = {}

    def power(v: str, e: int) -> Polynomial:
        key = (v, e)
        if key not in powers:
            powers[key] = images[v] if e == 1 else power(v, e - 1) * images[v]
        return powers[key]

    result: dict[Monomial, Fraction] = {}
    for m, c in p.terms.items():
        kept = Monomial((v, e) for v, e in m if v not in images)
        term = Polynomial._raw({kept: c}, universe)
        for v, e in m:
            if v in images:
                term = term * power(v, e)
                if term.is_zero():
                    break
        for tm, tc in term.terms.items():
            s = result.get(tm, 0) + tc
            if s:
                result[tm] = s
            else:
                result.pop(tm, None)
    return Polynomial._raw(result, universe)


def evaluate(p: Polynomial, point: Mapping[str, object]):
    """Evaluate at a point; exact when every coordinate is rational."""
    exact = all(isinstance(point[v], (int, Fraction)) for v in p.used_variables() if v in point)
    total = Fraction(0) if exact else 0.0
    for m, c in p.terms.items():
        val = c if exact else float(c)
        for v, e in m:
            if v not in point:
                raise KeyError(f"unbound variable {v!r}")
            x = point[v]
            val = val * (x ** e)
        total += val
    return total


# parsing ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d+|\d+(?:/\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>\*\*|[-+*^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text_len = len(text)
    while pos < text_len:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolynomialSyntaxError("unexpected character", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", text_len))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = tuple(variables) if variables is not None else None
        self.universe = self.variables or ()

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, pos = self.take()
        if kind != "op" or val != op:
            raise PolynomialSyntaxError(f"expected {op!r}", self.text, pos)

    def parse(self) -> Polynomial:
        if self.peek()[0] == "end":
            raise PolynomialSyntaxError("empty expression", self.text, 0)
        p = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise PolynomialSyntaxError(f"unexpected token {val!r}", self.text, pos)
        return p.with_variables(self.universe)

    def expr(self) -> Polynomial:
        p = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-" and val:
                self.take()
                q = self.term()
                p = p + q if val == "+" else p - q
            else:
                return p

    def term(self) -> Polynomial:
        p = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                p = p * self.factor()
            else:
                return p

    def factor(self) -> Polynomial:
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return -self.factor()
        base = self.base()
        kind, val, pos = self.peek()
        if kind == "op" and val in ("^", "**"):
            self.take()
            kind, val, pos = self.peek()
            if kind == "op" and val == "-":
                raise PolynomialSyntaxError("negative exponent", self.text, pos)
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise PolynomialSyntaxError("exponent must be a nonnegative integer", self.text, pos)
            base = base ** int(val)
        return base

    def base(self) -> Polynomial:
        kind, val, pos = self.take()
        if kind == "num":
            return Polynomial.constant(Fraction(val), self.universe)
        if kind == "id":
            if self.variables is not None and val not in self.variables:
                raise UnknownIdentifierError(f"unknown identifier {val!r}", self.text, pos)
            return Polynomial.var(val, self.universe)
        if kind == "op" and val == "(":
            p = self.expr()
            self.expect_op(")")
            return p
        what = "end of input" if kind == "end" else repr(val)
        raise PolynomialSyntaxError(f"unexpected {what}", self.text, pos)


def parse_polynomial(text: str, variables: Sequence[str] | None = None) -> Polynomial:
    """Parse ``text``; identifiers must belong to ``variables`` when given."""
    return _Parser(str(text), variables).parse()


# inequalities -------------------------------------------------------------

@dataclass(frozen=True)
class Inequality:
    """``lhs >= 0`` or, when ``strict``, ``lhs > 0``."""

    lhs: Polynomial
    strict: bool = False

    def holds(self, point: Mapping[str, object]) -> bool:
        v = evaluate(self.lhs, point)
        return v > 0 if self.strict else v >= 0

    def relaxed(self) -> "Inequality":
        return Inequality(self.lhs, False)

    def negation(self) -> "Inequality":
        """The complementary atom: not(p >= 0) is -p > 0."""
        return Inequality(-self.lhs, not self.strict)

    def to_str(self) -> str:
        return f"{self.lhs.to_str()} {'>' if self.strict else '>='} 0"

    def __str__(self):
        return self.to_str()


_REL = re.compile(r"(>=|<=|>|<)")


def parse_inequality(text: str, variables: Sequence[str] | None = None) -> Inequality:
    """Parse ``a OP b`` with OP in ``>= <= > <`` into canonical form against zero."""
    parts = _REL.split(text)
    if len(parts) != 3:
        raise PolynomialSyntaxError("expected exactly one comparison operator", text, None)
    left, rel, right = parts
    a = parse_polynomial(left, variables)
    b = parse_polynomial(right, variables)
    if rel in (">=", ">"):
        lhs = a - b
    else:
        lhs = b - a
    return Inequality(lhs, strict=rel in (">", "<"))


# monomial bases -----------------------------------------------------------

def monomials_up_to(variables: Sequence[str], max_degree: int, min_degree: int = 0) -> list[Monomial]:
    """All monomials with degree in ``[min_degree, max_degree]``, ascending graded-lex."""
    out: list[Monomial] = []
    for deg in range(max(min_degree, 0), max_degree + 1):
        block = [Monomial((v, 1) for v in combo)
                 for combo in combinations_with_replacement(variables, deg)]
        block.sort(key=lambda m: m.grlex_key(variables))
        out.extend(block)
    return out


def monomial_poly(m: Monomial, variables: Sequence[str] = ()) -> Polynomial:
    return Polynomial._raw({m: Fraction(1)}, _merge_vars(tuple(variables), m.variables()))

"""Distributions of random variables and their moments.

Four kinds are supported: normal, uniform, discrete and constant.  Raw
moments are exact rationals whenever the parameters are rational (a normal
distribution is parametrized by its mean and variance, so this always holds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .poly import Monomial, Polynomial

KINDS = ("normal", "uniform", "discrete", "constant")


def to_fraction(value) -> Fraction:
    """Read a rational from an int, Fraction, or a ``"p/q"`` / decimal string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot read {value!r} as a rational")


def fraction_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class Distribution:
    """A random-variable law with closed-form moments.

    ``params`` depends on ``kind``: normal ``(mu, sigma2)``, uniform ``(a, b)``,
    constant ``(c,)``; discrete uses ``support``, a tuple of (value, prob).
    """

    kind: str
    params: tuple[Fraction, ...] = ()
    support: tuple[tuple[Fraction, Fraction], ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "normal":
            if len(self.params) != 2 or self.params[1] < 0:
                raise ValueError("normal needs (mu, sigma2) with sigma2 >= 0")
        elif self.kind == "uniform":
            if len(self.params) != 2 or not self.params[0] < self.params[1]:
                raise ValueError("uniform(a, b) requires a < b")
        elif self.kind == "constant":
            if len(self.params) != 1:
                raise ValueError("constant needs one value")
        else:
            if not self.support:
                raise ValueError("discrete distribution needs at least one atom")
            if any(p <= 0 for _, p in self.support):
                raise ValueError("discrete probabilities must be positive")
            if sum(p for _, p in self.support) != 1:
                raise ValueError("discrete probabilities must sum to 1")

    # constructors -------------------------------------------------------
    @classmethod
    def normal(cls, mu, sigma2) -> "Distribution":
        return cls("normal", (to_fraction(mu), to_fraction(sigma2)))

    @classmethod
    def uniform(cls, a, b) -> "Distribution":
        return cls("uniform", (to_fraction(a), to_fraction(b)))

    @classmethod
    def constant(cls, c) -> "Distribution":
        return cls("constant", (to_fraction(c),))

    @classmethod
    def discrete(cls, atoms: Sequence[tuple[object, object]]) -> "Distribution":
        return cls("discrete", (), tuple((to_fraction(v), to_fraction(p)) for v, p in atoms))

    # moments ------------------------------------------------------------
    @property
    def mean(self) -> Fraction:
        return raw_moment(self, 1)

    def bounds(self) -> tuple[Fraction, Fraction] | None:
        """Closed support interval, or None when unbounded."""
        if self.kind == "uniform":
            return self.params
        if self.kind == "constant":
            return (self.params[0], self.params[0])
        if self.kind == "discrete":
            vals = [v for v, _ in self.support]
            return (min(vals), max(vals))
        if self.params[1] == 0:
            return (self.params[0], self.params[0])
        return None

    def to_json(self) -> dict:
        if self.kind == "normal":
            return {"kind": "normal", "mu": fraction_str(self.params[0]),
                    "sigma2": fraction_str(self.params[1])}
        if self.kind == "uniform":
            return {"kind": "uniform", "a": fraction_str(self.params[0]),
                    "b": fraction_str(self.params[1])}
        if self.kind == "constant":
            return {"kind": "constant", "c": fraction_str(self.params[0])}
        return {"kind": "discrete",
                "atoms": [[fraction_str(v), fraction_str(p)] for v, p in self.support]}


def distribution_from_json(doc) -> Distribution:
    """Decode ``{"kind": ..., ...}``; a bare number means a point mass."""
    if not isinstance(doc, Mapping):
        return Distribution.constant(doc)
    kind = doc.get("kind")
    if kind == "normal":
        return Distribution.normal(doc["mu"], doc["sigma2"])
    if kind == "uniform":
        return Distribution.uniform(doc["a"], doc["b"])
    if kind == "constant":
        return Distribution.constant(doc["c"])
    if kind == "discrete":
        return Distribution.discrete(doc["atoms"])
    raise ValueError(f"unknown distribution kind {kind!r}")


def raw_moment(d: Distribution, a: int) -> Fraction:
    """E(r^a) for a nonnegative integer ``a``."""
    if a < 0:
        raise ValueError("moment order must be nonnegative")
    if a == 0:
        return Fraction(1)
    if d.kind == "constant":
        return d.params[0] ** a
    if d.kind == "discrete":
        return sum((p * v ** a for v, p in d.support), Fraction(0))
    if d.kind == "uniform":
        lo, hi = d.params
        return (hi ** (a + 1) - lo ** (a + 1)) / ((a + 1) * (hi - lo))
    mu, s2 = d.params
    prev, cur = Fraction(1), mu
    for k in range(2, a + 1):
        prev, cur = cur, mu * cur + (k - 1) * s2 * prev
    return cur


def abs_central_moment(d: Distribution) -> float | Fraction:
    """E|r - E r|; exact except for the normal kind."""
    if d.kind == "constant":
        return Fraction(0)
    if d.kind == "uniform":
        lo, hi = d.params
        return (hi - lo) / 4
    if d.kind == "discrete":
        mu = d.mean
        return sum((p * abs(v - mu) for v, p in d.support), Fraction(0))
    return math.sqrt(float(d.params[1])) * math.sqrt(2 / math.pi)


def sample(d: Distribution, rng: np.random.Generator) -> float:
    """One draw from ``d`` using ``rng``."""
    return float(transform_uniforms(d, rng.random((1, 2)))[0])


def transform_uniforms(d: Distribution, u: np.ndarray) -> np.ndarray:
    """Map i.i.d. uniforms to draws of ``d``, vectorized over the leading axis.

    ``u`` has shape ``(..., 2)``: the normal kind consumes both columns
    (Box-Muller), the other kinds only the first.
    """
    u = np.asarray(u, dtype=float)
    u0 = u[..., 0]
    if d.kind == "constant":
        return np.full(u0.shape, float(d.params[0]))
    if d.kind == "uniform":
        lo, hi = float(d.params[0]), float(d.params[1])
        return lo + (hi - lo) * u0
    if d.kind == "discrete":
        vals = np.array([float(v) for v, _ in d.support])
        cdf = np.cumsum([float(p) for _, p in d.support])
        cdf[-1] = 1.0
        return vals[np.searchsorted(cdf, u0, side="right").clip(max=len(vals) - 1)]
    mu, s2 = float(d.params[0]), float(d.params[1])
    z = np.sqrt(-2.0 * np.log1p(-u0)) * np.cos(2.0 * np.pi * u[..., 1])
    return mu + math.sqrt(s2) * z


def moment_substitute(p: Polynomial, dists: Mapping[str, Distribution]) -> Polynomial:
    """Replace every factor ``r^a`` with ``E(r^a)`` for the variables in ``dists``.

    Distinct random variables are independent, so a mixed monomial factors.
    """
    if not dists:
        return p
    names = set(dists)
    cache: dict[tuple[str, int], Fraction] = {}
    out: dict[Monomial, Fraction] = {}
    for m, c in p.terms.items():
        factor = c
        kept = []
        for v, e in m:
            if v in names:
                key = (v, e)
                if key not in cache:
                    cache[key] = raw_moment(dists[v], e)
                factor *= cache[key]
            else:
                kept.append((v, e))
        if factor:
            mono = Monomial(kept)
            out[mono] = out.get(mono, Fraction(0)) + factor
    universe = tuple(v for v in p.variables if v not in names)
    return Polynomial(out, universe)

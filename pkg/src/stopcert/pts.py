"""Probabilistic transition systems: data model, JSON loading and validation.

A system has program variables, independent random variables sampled afresh
at every step, locations, and guarded transitions.  Each transition picks one
of its update branches with the branch probability and applies all variable
updates simultaneously.  The final location, when present, always carries an
identity self-loop so the process is defined at every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .moments import Distribution, distribution_from_json, fraction_str, to_fraction
from .poly import Inequality, Polynomial, parse_inequality, parse_polynomial

SCHEMA = "stopcert-pts/1"
STEP_VAR = "k"


class PtsError(ValueError):
    """Schema violation or inconsistent system description."""


class NoEnabledTransition(RuntimeError):
    pass


class MultipleEnabledTransitions(RuntimeError):
    pass


@dataclass(frozen=True)
class Guard:
    """Conjunction of inequality atoms; no atoms means ``true``."""

    atoms: tuple[Inequality, ...] = ()

    @property
    def is_true(self) -> bool:
        return not self.atoms

    def holds(self, point: Mapping[str, object]) -> bool:
        return all(a.holds(point) for a in self.atoms)

    def to_str(self) -> str:
        return " and ".join(a.to_str() for a in self.atoms) if self.atoms else "true"

    def __str__(self):
        return self.to_str()


@dataclass(frozen=True)
class UpdateBranch:
    probability: Fraction
    update: tuple[tuple[str, Polynomial], ...]

    def __post_init__(self):
        if not self.probability > 0:
            raise PtsError("branch probability must be positive")

    @property
    def images(self) -> dict[str, Polynomial]:
        return dict(self.update)


@dataclass(frozen=True)
class Transition:
    source: str
    guard: Guard
    branches: tuple[UpdateBranch, ...]
    destination: str
    label: str = ""

    def __post_init__(self):
        if not self.branches:
            raise PtsError("transition needs at least one branch")
        total = sum((b.probability for b in self.branches), Fraction(0))
        if total != 1:
            raise PtsError(f"branch probabilities sum to {total}, not 1")

    def name(self, index: int | None = None) -> str:
        if self.label:
            return self.label
        tag = f"#{index} " if index is not None else ""
        return f"{tag}{self.source}->{self.destination}"


@dataclass(frozen=True)
class Pts:
    variables: tuple[str, ...]
    randoms: tuple[tuple[str, Distribution], ...]
    locations: tuple[str, ...]
    init_loc: str
    final_loc: str | None
    init: tuple[tuple[str, Distribution], ...]
    transitions: tuple[Transition, ...]
    trusted: bool = False
    params: tuple[tuple[str, Fraction], ...] = ()
    description: str = field(default="", compare=False)

    @property
    def random_dists(self) -> dict[str, Distribution]:
        return dict(self.randoms)

    @property
    def init_dists(self) -> dict[str, Distribution]:
        return dict(self.init)

    @property
    def random_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.randoms)

    def transitions_from(self, loc: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == loc]

    def index_of(self, tau: Transition) -> int:
        for i, t in enumerate(self.transitions):
            if t is tau:
                return i
        return self.transitions.index(tau)


@dataclass(frozen=True)
class Configuration:
    location: str
    valuation: tuple[float, ...]
    step: int = 0


# loading ------------------------------------------------------------------

def _require(doc: Mapping, key: str):
    if key not in doc:
        raise PtsError(f"missing field {key!r}")
    return doc[key]


def _parse_guard(node, universe: Sequence[str], bindings) -> list[Guard]:
    """Return one conjunctive guard per disjunct of ``node``."""
    if node is None or node == "true" or node == []:
        return [Guard()]
    if isinstance(node, str):
        node = [node]
    if isinstance(node, Mapping):
        if set(node) != {"or"}:
            raise PtsError(f"unsupported guard node {sorted(node)}")
        out: list[Guard] = []
        for sub in node["or"]:
            out.extend(_parse_guard(sub, universe, bindings))
        return out
    if not isinstance(node, list):
        raise PtsError(f"bad guard {node!r}")
    atoms = []
    for text in node:
        if not isinstance(text, str):
            raise PtsError("guard atoms must be strings; only a top-level 'or' is supported")
        if text.strip() == "true":
            continue
        ineq = parse_inequality(text, universe)
        lhs = ineq.lhs.substitute(bindings) if bindings else ineq.lhs
        atoms.append(Inequality(lhs, ineq.strict))
    return [Guard(tuple(atoms))]


def load_pts(document: Mapping | str | Path, params: Mapping[str, object] | None = None) -> Pts:
    """Build a :class:`Pts` from a JSON document, a JSON string or a file path.

    ``params`` overrides the document's symbolic parameter values.
    """
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        path = Path(document)
        doc = json.loads(path.read_text())
    elif isinstance(document, str):
        doc = json.loads(document)
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise PtsError("document must be a JSON object")
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise PtsError(f"unsupported schema {schema!r}")

    variables = tuple(_require(doc, "vars"))
    if not variables or len(set(variables)) != len(variables):
        raise PtsError("vars must be a non-empty list of distinct names")
    rand_doc = doc.get("randoms", {}) or {}
    randoms = tuple((name, distribution_from_json(d)) for name, d in rand_doc.items())
    param_vals = {k: to_fraction(v) for k, v in (doc.get("params", {}) or {}).items()}
    for k, v in (params or {}).items():
        if k not in param_vals:
            raise PtsError(f"unknown parameter {k!r}")
        param_vals[k] = to_fraction(v)
    names = list(variables) + [n for n, _ in randoms] + list(param_vals)
    if STEP_VAR in names:
        raise PtsError(f"the name {STEP_VAR!r} is reserved for the step counter")
    if len(set(names)) != len(names):
        raise PtsError("variable, random and parameter names must be distinct")
    bindings = {k: Polynomial.constant(v) for k, v in param_vals.items()}
    state_universe = tuple(variables) + tuple(n for n, _ in randoms)

    def poly(text) -> Polynomial:
        p = parse_polynomial(str(text), names)
        if bindings:
            p = p.substitute(bindings)
        return p.with_variables(state_universe)

    locations = tuple(_require(doc, "locations"))
    if len(set(locations)) != len(locations) or not locations:
        raise PtsError("locations must be a non-empty list of distinct names")
    init_loc = _require(doc, "init_loc")
    final_loc = doc.get("final_loc")
    for loc in [init_loc] + ([final_loc] if final_loc is not None else []):
        if loc not in locations:
            raise PtsError(f"unknown location {loc!r}")

    init_doc = doc.get("init", {}) or {}
    init = []
    for v in variables:
        if v not in init_doc:
            raise PtsError(f"init has no entry for {v!r}")
        entry = init_doc[v]
        if isinstance(entry, Mapping):
            init.append((v, distribution_from_json(entry)))
        else:
            value = poly(entry)
            if not value.is_constant():
                raise PtsError(f"init value for {v!r} must be constant")
            init.append((v, Distribution.constant(value.constant_term())))
    extra = set(init_doc) - set(variables)
    if extra:
        raise PtsError(f"init mentions unknown variables {sorted(extra)}")

    trans_doc = _require(doc, "transitions")
    if not trans_doc:
        raise PtsError("no transitions")
    transitions: list[Transition] = []
    for td in trans_doc:
        src, dst = _require(td, "from"), _require(td, "to")
        for loc in (src, dst):
            if loc not in locations:
                raise PtsError(f"unknown location {loc!r}")
        guards = _parse_guard(td.get("guard"), names, bindings)
        guards = [Guard(tuple(Inequality(a.lhs.with_variables(state_universe), a.strict)
                              for a in g.atoms)) for g in guards]
        for g in guards:
            for a in g.atoms:
                if a.lhs.used_variables() - set(variables):
                    raise PtsError("guards may only mention program variables")
        branches = []
        for bd in _require(td, "branches"):
            upd = bd.get("update", {}) or {}
            unknown = set(upd) - set(variables)
            if unknown:
                raise PtsError(f"update of unknown variables {sorted(unknown)}")
            images = tuple((v, poly(upd[v]) if v in upd else Polynomial.var(v, state_universe))
                           for v in variables)
            branches.append(UpdateBranch(to_fraction(bd.get("p", 1)), images))
        for g in guards:
            transitions.append(Transition(src, g, tuple(branches), dst, td.get("label", "")))

    if final_loc is not None and not any(t.source == final_loc for t in transitions):
        transitions.append(identity_transition(final_loc, variables, state_universe))

    return Pts(
        variables=variables,
        randoms=randoms,
        locations=locations,
        init_loc=init_loc,
        final_loc=final_loc,
        init=tuple(init),
        transitions=tuple(transitions),
        trusted=bool(doc.get("trusted", False)),
        params=tuple(param_vals.items()),
        description=str(doc.get("description", "")),
    )


def identity_transition(loc: str, variables: Sequence[str], universe: Sequence[str] = ()) -> Transition:
    images = tuple((v, Polynomial.var(v, universe or variables)) for v in variables)
    return Transition(loc, Guard(), (UpdateBranch(Fraction(1), images),), loc, "stay")


def pts_to_json(p: Pts) -> dict:
    """Encode ``p`` so that :func:`load_pts` rebuilds an equal system."""
    transitions = []
    for t in p.transitions:
        entry = {
            "from": t.source,
            "guard": [a.to_str() for a in t.guard.atoms] if t.guard.atoms else "true",
            "branches": [
                {"p": fraction_str(b.probability),
                 "update": {v: img.to_str() for v, img in b.update}}
                for b in t.branches
            ],
            "to": t.destination,
        }
        if t.label:
            entry["label"] = t.label
        transitions.append(entry)
    doc = {
        "schema": SCHEMA,
        "vars": list(p.variables),
        "randoms": {n: d.to_json() for n, d in p.randoms},
        "locations": list(p.locations),
        "init_loc": p.init_loc,
        "final_loc": p.final_loc,
        "init": {v: (fraction_str(d.params[0]) if d.kind == "constant" else d.to_json())
                 for v, d in p.init},
        "transitions": transitions,
        "trusted": p.trusted,
    }
    if p.params:
        # already substituted into the polynomials; kept so the binding is on record
        doc["params"] = {k: fraction_str(v) for k, v in p.params}
    if p.description:
        doc["description"] = p.description
    return doc


def save_pts(p: Pts, path: str | Path) -> None:
    Path(path).write_text(json.dumps(pts_to_json(p), indent=2) + "\n")


# semantics ------------------------------------------------------------------

def _point(p: Pts, valuation: Sequence[float]) -> dict[str, float]:
    if len(valuation) != len(p.variables):
        raise ValueError("valuation length does not match the number of variables")
    return dict(zip(p.variables, valuation))


def enabled_transitions(p: Pts, location: str, valuation: Sequence[float]) -> list[Transition]:
    point = _point(p, valuation)
    return [t for t in p.transitions_from(location) if t.guard.holds(point)]


def enabled_transition(p: Pts, c: Configuration) -> Transition:
    """The unique transition enabled at ``c``."""
    found = enabled_transitions(p, c.location, c.valuation)
    if not found:
        raise NoEnabledTransition(f"no enabled transition at {c.location} {c.valuation}")
    if len(found) > 1:
        raise MultipleEnabledTransitions(
            f"multiple enabled transitions at {c.location} {c.valuation}: "
            + ", ".join(t.name() for t in found))
    return found[0]


@dataclass
class NondemonicReport:
    status: str
    per_location: dict[str, str]
    witness: tuple[str, tuple[float, ...], int] | None = None
    samples: int = 0

    @property
    def ok(self) -> bool:
        return self.status != "FAIL"

    def to_json(self) -> dict:
        out = {"status": self.status, "per_location": self.per_location, "samples": self.samples}
        if self.witness is not None:
            loc, point, count = self.witness
            out["witness"] = {"location": loc, "point": list(point), "enabled": count}
        return out


def _complement_pair(ts: Sequence[Transition]) -> bool:
    if len(ts) == 1:
        return ts[0].guard.is_true
    if len(ts) != 2 or any(len(t.guard.atoms) != 1 for t in ts):
        return False
    a, b = ts[0].guard.atoms[0], ts[1].guard.atoms[0]
    return a.strict != b.strict and a.lhs == -b.lhs


def validate_nondemonic(p: Pts, samples: int = 1000, seed: int = 0) -> NondemonicReport:
    """Check that exactly one transition is enabled everywhere.

    Locations whose guards are ``true`` or a complement pair pass exactly.
    Others are probed at the all-ones point, at standard-normal points and at
    branch images of earlier probes.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    per_loc: dict[str, str] = {}
    rng = np.random.default_rng(seed)
    n = len(p.variables)
    witness = None
    for loc in p.locations:
        ts = p.transitions_from(loc)
        if not ts:
            continue
        if _complement_pair(ts):
            per_loc[loc] = "EXACT-PASS"
            continue
        if p.trusted:
            per_loc[loc] = "TRUSTED"
            continue
        probes = [np.ones(n)]
        status = "PASS"
        for i in range(samples):
            pt = probes[i] if i < len(probes) else rng.standard_normal(n)
            count = len(enabled_transitions(p, loc, tuple(pt)))
            if count != 1:
                status = "FAIL"
                witness = (loc, tuple(float(v) for v in pt), count)
                break
            if len(probes) < samples:
                probes.extend(_branch_images(p, loc, pt, rng))
        per_loc[loc] = status
        if status == "FAIL":
            break
    statuses = set(per_loc.values())
    if "FAIL" in statuses:
        overall = "FAIL"
    elif statuses <= {"EXACT-PASS"}:
        overall = "EXACT-PASS"
    elif "TRUSTED" in statuses:
        overall = "TRUSTED"
    else:
        overall = "PASS"
    return NondemonicReport(overall, per_loc, witness, samples)


def _branch_images(p: Pts, loc: str, pt: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    from .moments import sample

    point = dict(zip(p.variables, (float(v) for v in pt)))
    for name, d in p.randoms:
        point[name] = sample(d, rng)
    out = []
    for t in enabled_transitions(p, loc, tuple(pt)):
        if t.destination != loc:
            continue
        for b in t.branches:
            img = np.array([float(poly.evaluate(point)) for _, poly in b.update])
            if np.all(np.isfinite(img)) and np.max(np.abs(img)) < 1e12:
                out.append(img)
    return out


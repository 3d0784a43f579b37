"""Synthesized invariants in a printable, serializable form."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .moments import fraction_str


def _num(v):
    if isinstance(v, Fraction):
        return fraction_str(v)
    return v


@dataclass
class InvariantReport:
    """A martingale expression together with the optional-stopping evidence behind it.

    ``precondition`` is ``"PDB"`` (bounded differences plus finite expected
    runtime) or ``"IUD"`` (a dominating integrable function); ``evidence``
    must carry the matching bound or certificate reference.
    """

    method: str
    seed: dict[str, str]
    preexp_pieces: list[dict]
    martingale: str
    precondition: str
    evidence: dict
    initial_expectation: Fraction | float
    statement: str
    assumptions: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.precondition not in ("PDB", "IUD"):
            raise ValueError("precondition must be PDB or IUD")
        if not self.evidence:
            raise ValueError("an invariant report needs a bound or a certificate reference")

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "preexp": self.preexp_pieces,
            "martingale": self.martingale,
            "precondition": self.precondition,
            "evidence": {k: _num(v) for k, v in self.evidence.items()},
            "initial_expectation": _num(self.initial_expectation),
            "statement": self.statement,
            "assumptions": list(self.assumptions),
        }

    def to_text(self) -> str:
        lines = [f"invariant ({self.method}, {self.precondition})"]
        for loc, p in self.seed.items():
            lines.append(f"  P[{loc}] = {p}")
        lines.append(f"  martingale: {self.martingale}")
        lines.append(f"  {self.statement}")
        ev = ", ".join(f"{k}={_num(v)}" for k, v in self.evidence.items())
        lines.append(f"  evidence: {ev}")
        for a in self.assumptions:
            lines.append(f"  assumes: {a}")
        return "\n".join(lines)

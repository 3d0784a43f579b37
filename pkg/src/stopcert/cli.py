"""Command-line front end.

Exit codes: 0 on success, 1 on a verified negative answer (infeasible,
rejected, validation failure), 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from .linear import (PastHypothesisError, determinize, invariant_report_linear,
                     past_bound, synth_linear_invariants)
from .moments import fraction_str, to_fraction
from .poly import PolynomialSyntaxError, UnknownIdentifierError
from .preexp import LocPoly, initial_expectation, preexp_pts
from .pts import PtsError, load_pts, validate_nondemonic
from .sdp import SdpOptions
from .sim import RunConfig, estimate_expectation
from .sos import Tolerances, build_constraints, compile_to_sdp, doob_invariant
from .sos import synthesize, verify_certificate

DEFAULT_SEED = 20240601


class UsageError(Exception):
    pass


def _params(items) -> dict[str, Fraction]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects name=value, got {item!r}")
        out[name.strip()] = to_fraction(value.strip())
    return out


def _load(args):
    return load_pts(Path(args.pts), _params(args.param))


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, default=str))
    else:
        print(text)


def _locpoly(pts, text: str, loc: str | None = None) -> LocPoly:
    if loc is None:
        return LocPoly(pts, text)
    return LocPoly(pts, {loc: text})


# subcommands --------------------------------------------------------------------

def cmd_validate(args) -> int:
    pts = _load(args)
    rep = validate_nondemonic(pts, samples=args.samples, seed=_seed(args))
    lines = [f"{rep.status}"] + [f"  {l}: {s}" for l, s in rep.per_location.items()]
    if rep.witness:
        lines.append(f"  witness: {rep.witness}")
    _emit(args, rep.to_json(), "\n".join(lines))
    return 0 if rep.ok else 1


def cmd_preexp(args) -> int:
    pts = _load(args)
    h = _locpoly(pts, args.poly, args.loc)
    pieces = preexp_pts(pts, h, shift_step=args.shift_step)
    _emit(args, {"h": h.to_json(), "pieces": pieces.to_json()},
          "\n".join(pc.to_str() for pc in pieces.pieces))
    return 0


def cmd_synth_linear(args) -> int:
    pts = _load(args)
    basis = synth_linear_invariants(determinize(pts))
    elements = []
    lines = [f"{len(basis)} linear invariant(s)"]
    for i, el in enumerate(basis.elements):
        e0 = initial_expectation(pts, el.h)
        elements.append({"h": el.h.to_json(), "equality": el.equality, "pdb": el.pdb.to_json(),
                         "initial_expectation": fraction_str(e0)})
        body = ", ".join(f"{l}: {p}" for l, p in el.h.to_json().items())
        k = "" if el.pdb.K is None else f" K={fraction_str(el.pdb.K)}"
        lines.append(f"  h{i}: {body}  [{el.pdb.verdict}{k}]  E h0 = {fraction_str(e0)}")
        if el.pdb.verdict != "bounded":
            lines.append(f"       {el.pdb.detail}")
    payload = {"invariants": elements, "reports": []}
    past = None
    if args.past_h:
        try:
            past = past_bound(pts, _locpoly(pts, args.past_h), args.K, args.eps,
                              assert_lower_bound=args.assert_lower_bound)
        except PastHypothesisError as exc:
            raise UsageError(str(exc))
        payload["past"] = past.to_json()
        lines.append(f"E(T) <= {fraction_str(past.bound)}")
    elif args.assume_past:
        past = args.assume_past
    if past is not None:
        reports = invariant_report_linear(pts, basis, past)
        payload["reports"] = [r.to_json() for r in reports]
        lines.extend(r.to_text() for r in reports)
    _emit(args, payload, "\n".join(lines))
    return 0


def _sdp_options(args, tol: Tolerances) -> SdpOptions:
    return SdpOptions(max_iters=args.max_iters, tol_margin=tol.margin, verbose=args.verbose)


def cmd_synth_sos(args) -> int:
    pts = _load(args)
    tol = Tolerances()
    if args.dump_sdp:
        system = build_constraints(pts, args.degree, args.eps, args.homogeneous)
        Path(args.dump_sdp).write_text(compile_to_sdp(system).dumps())
    res = synthesize(pts, args.degree, args.eps, args.homogeneous, tol, _sdp_options(args, tol))
    payload = {"status": res.status, "reason": res.reason, "margin": res.solution.t,
               "iterations": res.solution.iterations}
    lines = [f"{res.status}: margin {res.solution.t:.3g} after {res.solution.iterations} iterations"]
    if res.reason:
        lines.append(f"  {res.reason}")
    if res.certificate is None:
        _emit(args, payload, "\n".join(lines))
        return 1
    cert = res.certificate
    payload["certificate"] = cert.to_json()
    lines.append(f"alpha_effective = {fraction_str(cert.alpha)}")
    for l, v in cert.V.items():
        lines.append(f"  V[{l}] = {v.to_str(decimal=True)}")
    reports = []
    for l, summands in cert.summands.items():
        for s in summands:
            rep = doob_invariant(pts, LocPoly(pts, {l: s}), cert)
            reports.append(rep)
    payload["reports"] = [r.to_json() for r in reports]
    lines.extend(r.to_text() for r in reports)
    if args.out:
        Path(args.out).write_text(json.dumps(cert.to_json(), indent=2))
    _emit(args, payload, "\n".join(lines))
    return 0


def _read_certificate(pts, path: str, eps_override):
    doc = json.loads(Path(path).read_text())
    if "certificate" in doc:
        doc = doc["certificate"]
    if "V" not in doc:
        raise UsageError("certificate JSON has no 'V' entry")
    eps = eps_override if eps_override is not None else doc.get("eps")
    if eps is None:
        raise UsageError("no eps in the certificate; pass --eps")
    return LocPoly(pts, doc["V"]), to_fraction(eps)


def cmd_verify(args) -> int:
    pts = _load(args)
    V, eps = _read_certificate(pts, args.certificate, args.eps)
    tol = Tolerances()
    res = verify_certificate(pts, V, eps, tol, _sdp_options(args, tol))
    text = f"{'verified' if res.ok else 'rejected'}: {res.reason}"
    if res.margin is not None:
        text += f" (margin {res.margin:.3g})"
    _emit(args, res.to_json(), text)
    return 0 if res.ok else 1


def cmd_past(args) -> int:
    pts = _load(args)
    h = _locpoly(pts, args.h)
    try:
        res = past_bound(pts, h, args.K, args.eps, assert_lower_bound=args.assert_lower_bound)
    except PastHypothesisError as exc:
        _emit(args, {"status": "unverified", "reason": str(exc)}, f"unverified: {exc}")
        return 1
    lines = [f"E(T) <= {fraction_str(res.bound)}"] + [f"  {c}" for c in res.checks]
    lines += [f"  assumes: {a}" for a in res.assumptions]
    _emit(args, res.to_json(), "\n".join(lines))
    return 0


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("STOPCERT_SEED")
    return int(env) if env else DEFAULT_SEED


def cmd_simulate(args) -> int:
    pts = _load(args)
    at = args.at if args.at == "stop" else int(args.at)
    cfg = RunConfig(args.runs, args.max_steps, _seed(args), args.stop, args.workers, args.exact)
    est = estimate_expectation(pts, cfg, _locpoly(pts, args.expr), at)
    payload = dict(est.to_json(), expr=args.expr, at=args.at, seed=cfg.seed)
    text = (f"E({args.expr} at {args.at}) = {est.mean:.6g} +- {est.stderr:.3g}"
            f"  (truncated {est.truncated_fraction:.3%})")
    if est.unreliable:
        text += "  UNRELIABLE"
    _emit(args, payload, text)
    return 0


# parser -------------------------------------------------------------------------

def _fraction_arg(text: str) -> Fraction:
    try:
        return to_fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--param", action="append", metavar="NAME=VALUE",
                        help="bind a symbolic parameter of the system")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--max-iters", type=int, default=100)
    solver.add_argument("--verbose", action="store_true", help="print solver iterations to stderr")

    parser = argparse.ArgumentParser(prog="stopcert",
                                     description="Probabilistic invariants for polynomial transition systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check that guards are exclusive and total")
    p.add_argument("pts")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("preexp", parents=[common], help="symbolic pre-expectation")
    p.add_argument("pts")
    p.add_argument("--poly", required=True)
    p.add_argument("--loc", help="place the polynomial at this location only")
    p.add_argument("--shift-step", action="store_true", help="replace k by k + 1 before the step")
    p.set_defaults(func=cmd_preexp)

    p = sub.add_parser("synth-linear", parents=[common], help="linear invariants of the determinized system")
    p.add_argument("pts")
    p.add_argument("--past-h", help="ranking expression for the expected-runtime bound")
    p.add_argument("--K", type=_fraction_arg, default=Fraction(0))
    p.add_argument("--eps", type=_fraction_arg, default=Fraction(1))
    p.add_argument("--assert-lower-bound", action="store_true")
    p.add_argument("--assume-past", metavar="REASON",
                   help="accept a finite expected runtime established elsewhere")
    p.set_defaults(func=cmd_synth_linear)

    p = sub.add_parser("synth-sos", parents=[common, solver], help="sum-of-squares persistence certificate")
    p.add_argument("pts")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--eps", type=_fraction_arg, default=Fraction(1, 10))
    p.add_argument("--homogeneous", action="store_true")
    p.add_argument("--out", help="write the certificate JSON here")
    p.add_argument("--dump-sdp", metavar="FILE", help="write the compiled SDP as JSON")
    p.set_defaults(func=cmd_synth_sos)

    p = sub.add_parser("verify-certificate", parents=[common, solver], help="re-check a certificate")
    p.add_argument("pts")
    p.add_argument("certificate")
    p.add_argument("--eps", type=_fraction_arg, help="override the certificate's eps")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("past", parents=[common], help="expected-runtime bound from a ranking expression")
    p.add_argument("pts")
    p.add_argument("--h", required=True)
    p.add_argument("--K", type=_fraction_arg, required=True)
    p.add_argument("--eps", type=_fraction_arg, required=True)
    p.add_argument("--assert-lower-bound", action="store_true",
                   help="take h >= K as given when it cannot be checked")
    p.set_defaults(func=cmd_past)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate")
    p.add_argument("pts")
    p.add_argument("--runs", type=int, default=10000)
    p.add_argument("--max-steps", type=int, default=10000)
    p.add_argument("--seed", type=int, help="defaults to $STOPCERT_SEED")
    p.add_argument("--expr", default="k")
    p.add_argument("--at", default="stop", help="a step number or 'stop'")
    p.add_argument("--stop", help="stop once this inequality holds, e.g. 'x1 - x2 > 0'")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--exact", action="store_true", help="rational arithmetic with state sharing")
    p.set_defaults(func=cmd_simulate)
    return parser


_VALUE_OPTIONS = {"--K", "--eps", "--h", "--poly", "--past-h", "--expr", "--stop", "--param"}


def _attach_negative_values(argv: list[str]) -> list[str]:
    """Rewrite ``--K -1/5`` as ``--K=-1/5`` so argparse does not read the value as a flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and not argv[i + 1].startswith("--"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_negative_values(argv))
    if args.command == "simulate" and args.at != "stop" and not args.at.isdigit():
        parser.error("--at expects a step number or 'stop'")
    try:
        return args.func(args)
    except (UsageError, PtsError, PolynomialSyntaxError, UnknownIdentifierError,
            FileNotFoundError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"stopcert: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

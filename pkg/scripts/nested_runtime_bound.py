"""Expected total runtime of the nested loop: ranking bounds versus simulation.

Each loop alone has E(T) <= 20*b + 4 for its bound b, from the ranking
expression b - y with K = -1/5 and eps = 1/20.  The total number of inner
iterations is bounded by the product (20n + 4)(20m + 4), which expands to
400mn + 80(m + n) + 16.  Wald's identity gives the matching lower bound 400mn
from E(T) >= 20b per loop.
"""

import argparse
import json
from fractions import Fraction
from importlib.resources import files

from stopcert.linear import past_bound
from stopcert.moments import fraction_str, to_fraction
from stopcert.preexp import LocPoly
from stopcert.pts import load_pts
from stopcert.sim import RunConfig, estimate_expectation

DATA = files("stopcert") / "data"
K, EPS = Fraction(-1, 5), Fraction(1, 20)


def loop_bound(name: str, param: str, value: Fraction, var: str) -> Fraction:
    p = load_pts(DATA / f"{name}.json", {param: value})
    return past_bound(p, LocPoly(p, f"{param} - {var}"), K, EPS).bound


def bounds(m: Fraction, n: Fraction) -> dict:
    inner = loop_bound("nested_inner", "n", n, "y")
    outer = loop_bound("nested_outer", "m", m, "x")
    closed = 400 * m * n + 80 * (m + n) + 16
    if inner * outer != closed:
        raise AssertionError(f"product {inner * outer} differs from closed form {closed}")
    return {"inner": inner, "outer": outer, "upper": closed, "lower": 400 * m * n}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=to_fraction, default=Fraction(1, 4))
    ap.add_argument("--n", type=to_fraction, default=Fraction(1, 4))
    ap.add_argument("--runs", type=int, default=0, help="Monte Carlo runs; 0 skips the simulation")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    out = {k: fraction_str(v) for k, v in bounds(args.m, args.n).items()}
    if args.runs:
        p = load_pts(DATA / "nested.json", {"m": args.m, "n": args.n})
        est = estimate_expectation(p, RunConfig(args.runs, 100_000, args.seed), "c")
        out["simulated"] = est.to_json()
    print(json.dumps(out, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Largest decay rate eps for which an SOS certificate exists, by bisection.

For the Markov system with V = (x1 - x2)^2 the exact one-step contraction is
13/18, so the homogeneous degree-2 search should stop just below eps = 5/18.
"""

import argparse
from fractions import Fraction
from importlib.resources import files

from stopcert.moments import to_fraction
from stopcert.pts import load_pts
from stopcert.sos import synthesize


def bisect(p, degree: int, lo: Fraction, hi: Fraction, homogeneous: bool, steps: int):
    """Return (feasible eps, infeasible eps) after ``steps`` halvings; ``lo`` must be feasible."""
    if synthesize(p, degree, lo, homogeneous).status != "feasible":
        raise SystemExit(f"no certificate even at eps = {lo}")
    for _ in range(steps):
        mid = (lo + hi) / 2
        if synthesize(p, degree, mid, homogeneous).status == "feasible":
            lo = mid
        else:
            hi = mid
    return lo, hi


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("pts", nargs="?", default=str(files("stopcert") / "data" / "markov.json"))
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--lo", type=to_fraction, default=Fraction(1, 100))
    ap.add_argument("--hi", type=to_fraction, default=Fraction(1))
    ap.add_argument("--steps", type=int, default=12)
    ap.add_argument("--homogeneous", action="store_true")
    args = ap.parse_args(argv)
    lo, hi = bisect(load_pts(args.pts), args.degree, args.lo, args.hi, args.homogeneous, args.steps)
    print(f"feasible at eps = {float(lo):.6f}, infeasible at eps = {float(hi):.6f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

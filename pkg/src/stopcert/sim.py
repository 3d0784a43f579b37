"""Monte Carlo execution of probabilistic transition systems.

Runs are vectorized with numpy.  Every random draw comes from a counter-based
generator keyed by ``(seed, run, step, slot)``, so a run's trajectory does not
depend on which batch or worker executes it.  Per-run results are reduced in
run-index order with :func:`math.fsum`, which is exactly rounded and therefore
independent of how the runs were partitioned.
"""

from __future__ import annotations

import math
from fractions import Fraction
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .moments import transform_uniforms
from .poly import Inequality, Polynomial, parse_inequality, parse_polynomial
from .preexp import LocPoly, preexp_pts
from .pts import STEP_VAR, Configuration, MultipleEnabledTransitions, NoEnabledTransition, Pts
from .report import InvariantReport

UNRELIABLE_TRUNCATION = 0.01
_BATCH = 20000

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = z + _M1
    z = (z ^ (z >> np.uint64(30))) * _M2
    z = (z ^ (z >> np.uint64(27))) * _M3
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, runs: np.ndarray, step: int, slots: int) -> np.ndarray:
    """Uniforms in (0, 1) of shape ``(len(runs), slots)``, a pure function of the keys."""
    with np.errstate(over="ignore"):
        # a raw seed xor run index would only permute runs between nearby seeds
        base = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
        key = _mix(np.asarray(runs, dtype=np.uint64) ^ base)
        key = _mix(key ^ np.uint64((step + 1) & 0xFFFFFFFFFFFFFFFF))
        z = _mix(key[:, None] ^ np.arange(slots, dtype=np.uint64)[None, :])
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


@dataclass(frozen=True)
class RunConfig:
    runs: int
    max_steps: int
    seed: int = 0
    stop: str | Inequality | None = None
    workers: int = 1
    exact: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass(frozen=True)
class Trajectory:
    run: int
    configurations: tuple[Configuration, ...]
    hit: int | None


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    truncated_fraction: float
    runs: int
    used: int
    unreliable: bool = False

    def within(self, target: float, k: float = 4.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr,
                "truncated_fraction": self.truncated_fraction, "runs": self.runs,
                "used": self.used, "unreliable": self.unreliable}


def _compile(p: Polynomial, names: Sequence[str]) -> Callable[[np.ndarray], np.ndarray]:
    """Float evaluator of ``p`` on an array whose columns follow ``names``."""
    col = {n: i for i, n in enumerate(names)}
    terms = [(float(c), [(col[v], e) for v, e in m]) for m, c in p.terms.items()]

    def f(X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for c, factors in terms:
            t = np.full(X.shape[0], c)
            for j, e in factors:
                t = t * X[:, j] ** e
            out += t
        return out

    return f


def _holds(atoms, X) -> np.ndarray:
    ok = np.ones(X.shape[0], dtype=bool)
    for strict, f in atoms:
        v = f(X)
        ok &= (v > 0) if strict else (v >= 0)
    return ok


class _Machine:
    """Compiled form of a PTS: guards and branch updates as float evaluators."""

    def __init__(self, p: Pts, stop: str | Inequality | None):
        self.p = p
        self.loc_index = {l: i for i, l in enumerate(p.locations)}
        self.nv = len(p.variables)
        self.randoms = p.random_names
        names = list(p.variables) + list(self.randoms)
        self.trans = []
        for t in p.transitions:
            guard = [(a.strict, _compile(a.lhs, names)) for a in t.guard.atoms]
            cdf = np.cumsum([float(b.probability) for b in t.branches])
            cdf[-1] = 1.0
            updates = []
            for b in t.branches:
                imgs = b.images
                updates.append([_compile(imgs.get(v, Polynomial.var(v)), names) for v in p.variables])
            self.trans.append((self.loc_index[t.source], guard, cdf, updates,
                               self.loc_index[t.destination]))
        if isinstance(stop, str):
            stop = parse_inequality(stop, p.variables)
        self.stop = None if stop is None else [(stop.strict, _compile(stop.lhs, p.variables))]
        self.final = None if p.final_loc is None else self.loc_index[p.final_loc]
        self.init_dists = [p.init_dists[v] for v in p.variables]
        self.rand_dists = [p.random_dists[r] for r in self.randoms]
        # two uniforms per sampled variable, one for the branch choice
        self.slots = 2 * max(self.nv, len(self.randoms)) + 1

    def initial(self, seed: int, runs: np.ndarray):
        u = counter_uniforms(seed, runs, -1, self.slots)
        X = np.empty((len(runs), self.nv))
        for j, d in enumerate(self.init_dists):
            X[:, j] = transform_uniforms(d, u[:, 2 * j:2 * j + 2])
        L = np.full(len(runs), self.loc_index[self.p.init_loc], dtype=np.int64)
        return X, L

    def stopped(self, X, L) -> np.ndarray:
        done = np.zeros(len(L), dtype=bool)
        if self.final is not None:
            done |= L == self.final
        if self.stop is not None:
            done |= _holds(self.stop, X)
        return done

    def chosen(self, X, L, R) -> np.ndarray:
        """Index of the unique enabled transition per row."""
        Z = np.concatenate([X, R], axis=1)
        choice = np.full(len(L), -1, dtype=np.int64)
        for i, (src, guard, _, _, _) in enumerate(self.trans):
            rows = L == src
            if not rows.any():
                continue
            en = np.zeros(len(L), dtype=bool)
            en[rows] = _holds(guard, Z[rows])
            if (en & (choice >= 0)).any():
                raise MultipleEnabledTransitions(f"two transitions enabled at {self.p.locations[src]}")
            choice[en] = i
        if (choice < 0).any():
            r = int(np.flatnonzero(choice < 0)[0])
            raise NoEnabledTransition(
                f"no transition enabled at {self.p.locations[L[r]]} for {X[r].tolist()}")
        return choice

    def step(self, seed: int, runs: np.ndarray, k: int, X, L, active):
        """One synchronous step for the rows in ``active``; others are left unchanged."""
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return X, L, np.zeros(len(L), dtype=np.int64) - 1
        u = counter_uniforms(seed, runs[idx], k, self.slots)
        R = np.empty((idx.size, len(self.randoms)))
        for j, d in enumerate(self.rand_dists):
            R[:, j] = transform_uniforms(d, u[:, 2 * j:2 * j + 2])
        Xa, La = X[idx], L[idx]
        choice = self.chosen(Xa, La, R)
        Z = np.concatenate([Xa, R], axis=1)
        newX, newL = Xa.copy(), La.copy()
        for i, (_, _, cdf, updates, dst) in enumerate(self.trans):
            rows = choice == i
            if not rows.any():
                continue
            branch = np.searchsorted(cdf, u[rows, -1], side="right").clip(max=len(cdf) - 1)
            Zr = Z[rows]
            block = np.empty((Zr.shape[0], self.nv))
            for b, fns in enumerate(updates):
                pick = branch == b
                if not pick.any():
                    continue
                for j, f in enumerate(fns):
                    block[pick, j] = f(Zr[pick])
            newX[rows] = block
            newL[rows] = dst
        X, L = X.copy(), L.copy()
        X[idx], L[idx] = newX, newL
        full_choice = np.full(len(L), -1, dtype=np.int64)
        full_choice[idx] = choice
        return X, L, full_choice

    # uniform engine interface shared with _ExactMachine

    def start(self, seed, runs):
        return self.initial(seed, runs)

    def done(self, state):
        return self.stopped(*state)

    def advance(self, seed, runs, k, state, active):
        X, L, choice = self.step(seed, runs, k, state[0], state[1], active)
        return (X, L), choice

    def evaluate(self, polys: Mapping, state, keys, k) -> np.ndarray:
        """Value of ``polys[key]`` per row, where ``keys`` selects the polynomial."""
        X, L = state
        names = list(self.p.variables) + [STEP_VAR]
        K = np.broadcast_to(np.asarray(k, dtype=float), (len(L),))
        Z = np.concatenate([X, K[:, None]], axis=1)
        out = np.zeros(len(L))
        for key, poly in polys.items():
            rows = keys == key
            if rows.any():
                out[rows] = _compile(poly, names)(Z[rows])
        return out


class _ExactMachine:
    """Rational-arithmetic variant for systems whose coordinates outgrow floats.

    Runs in the same state share a class id; a class's successor is memoized
    on (class, random draws, transition, branch), so the number of distinct
    states bounds the work, not the number of runs.  Draws are the same as
    in float mode: discrete and constant samples are exact, continuous ones
    are the float draw converted exactly.
    """

    def __init__(self, p: Pts, stop: str | Inequality | None):
        self.p = p
        self.randoms = p.random_names
        self.nv = len(p.variables)
        self.slots = 2 * max(self.nv, len(self.randoms)) + 1
        self.cdfs = []
        for t in p.transitions:
            cdf = np.cumsum([float(b.probability) for b in t.branches])
            cdf[-1] = 1.0
            self.cdfs.append(cdf)
        if isinstance(stop, str):
            stop = parse_inequality(stop, p.variables)
        self.stop = stop
        self.states: list[tuple[str, tuple[Fraction, ...]]] = []
        self._ids: dict = {}
        self._succ: dict = {}
        self._choice: dict = {}

    def _intern(self, state) -> int:
        cid = self._ids.get(state)
        if cid is None:
            cid = self._ids[state] = len(self.states)
            self.states.append(state)
        return cid

    def _draws(self, dists, u) -> list[tuple]:
        cols = []
        for j, d in enumerate(dists):
            uj = u[:, 2 * j:2 * j + 2]
            if d.kind == "constant":
                cols.append([d.params[0]] * len(u))
            elif d.kind == "discrete":
                cdf = np.cumsum([float(q) for _, q in d.support])
                cdf[-1] = 1.0
                at = np.searchsorted(cdf, uj[:, 0], side="right").clip(max=len(cdf) - 1)
                cols.append([d.support[i][0] for i in at])
            else:
                cols.append([Fraction(float(v)) for v in transform_uniforms(d, uj)])
        return list(zip(*cols)) if cols else [()] * len(u)

    def initial(self, seed: int, runs: np.ndarray) -> np.ndarray:
        u = counter_uniforms(seed, runs, -1, self.slots)
        dists = [self.p.init_dists[v] for v in self.p.variables]
        return np.array([self._intern((self.p.init_loc, vals)) for vals in self._draws(dists, u)],
                        dtype=np.int64)

    def point(self, cid: int, extra=()) -> dict:
        loc, vals = self.states[cid]
        pt = dict(zip(self.p.variables, vals))
        pt.update(extra)
        return pt

    def stopped(self, ids: np.ndarray) -> np.ndarray:
        uniq, inv = np.unique(ids, return_inverse=True)
        flags = np.zeros(len(uniq), dtype=bool)
        for j, cid in enumerate(uniq.tolist()):
            loc, _ = self.states[cid]
            done = loc == self.p.final_loc
            if not done and self.stop is not None:
                done = self.stop.holds(self.point(cid))
            flags[j] = done
        return flags[inv.reshape(-1)]

    def _transition(self, cid: int, draw: tuple) -> int:
        key = (cid, draw)
        i = self._choice.get(key)
        if i is None:
            loc, _ = self.states[cid]
            pt = self.point(cid, zip(self.randoms, draw))
            hits = [j for j, t in enumerate(self.p.transitions)
                    if t.source == loc and t.guard.holds(pt)]
            if not hits:
                raise NoEnabledTransition(f"no transition enabled at {loc}")
            if len(hits) > 1:
                raise MultipleEnabledTransitions(f"two transitions enabled at {loc}")
            i = self._choice[key] = hits[0]
        return i

    def _successor(self, cid: int, draw: tuple, i: int, b: int) -> int:
        key = (cid, draw, i, b)
        nxt = self._succ.get(key)
        if nxt is None:
            t = self.p.transitions[i]
            pt = self.point(cid, zip(self.randoms, draw))
            imgs = t.branches[b].images
            vals = tuple(imgs[v].evaluate(pt) if v in imgs else pt[v] for v in self.p.variables)
            nxt = self._succ[key] = self._intern((t.destination, vals))
        return nxt

    def step(self, seed: int, runs: np.ndarray, k: int, ids: np.ndarray, active: np.ndarray):
        ids = ids.copy()
        choice = np.full(len(ids), -1, dtype=np.int64)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return ids, choice
        u = counter_uniforms(seed, runs[idx], k, self.slots)
        if self.randoms:
            draws = self._draws([self.p.random_dists[r] for r in self.randoms], u)
            table: dict = {}
            draw_ix = np.array([table.setdefault(d, len(table)) for d in draws], dtype=np.int64)
            draw_list = list(table)
        else:
            draw_ix, draw_list = np.zeros(idx.size, dtype=np.int64), [()]
        pairs = np.stack([ids[idx], draw_ix], axis=1)
        upairs, inv = np.unique(pairs, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        trans = np.array([self._transition(int(c), draw_list[d]) for c, d in upairs], dtype=np.int64)
        tr = trans[inv]
        branch = np.zeros(idx.size, dtype=np.int64)
        for i in np.unique(tr).tolist():
            rows = tr == i
            cdf = self.cdfs[i]
            branch[rows] = np.searchsorted(cdf, u[rows, -1], side="right").clip(max=len(cdf) - 1)
        keys, inv2 = np.unique(np.stack([inv, branch], axis=1), axis=0, return_inverse=True)
        succ = np.array([self._successor(int(upairs[j][0]), draw_list[upairs[j][1]], int(trans[j]), int(b))
                         for j, b in keys], dtype=np.int64)
        ids[idx] = succ[inv2.reshape(-1)]
        choice[idx] = tr
        return ids, choice

    def locations(self, ids: np.ndarray) -> np.ndarray:
        index = {l: i for i, l in enumerate(self.p.locations)}
        return np.array([index[self.states[c][0]] for c in ids.tolist()], dtype=np.int64)

    start = initial
    done = stopped
    advance = step

    def evaluate(self, polys: Mapping, ids: np.ndarray, keys: np.ndarray, k) -> np.ndarray:
        ks = np.broadcast_to(np.asarray(k, dtype=np.int64), ids.shape)
        combos, inv = np.unique(np.stack([ids, keys, ks], axis=1), axis=0, return_inverse=True)
        vals = np.array([float(polys[int(key)].evaluate(self.point(int(cid), {STEP_VAR: int(kk)})))
                         for cid, key, kk in combos])
        return vals[inv.reshape(-1)] if len(vals) else np.zeros(0)


def _batches(cfg: RunConfig) -> list[np.ndarray]:
    size = min(_BATCH, -(-cfg.runs // cfg.workers))
    return [np.arange(s, min(s + size, cfg.runs), dtype=np.int64) for s in range(0, cfg.runs, size)]


def _map_batches(cfg: RunConfig, fn) -> list:
    batches = _batches(cfg)
    if cfg.workers == 1:
        return [fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, batches))


def _engine(p: Pts, cfg: RunConfig, stop):
    return _ExactMachine(p, stop) if cfg.exact else _Machine(p, stop)


def _loc_keys(m, state) -> np.ndarray:
    return m.locations(state) if isinstance(m, _ExactMachine) else state[1]


def _take(state, rows):
    if isinstance(state, tuple):
        return state[0][rows], state[1][rows]
    return state[rows]


def simulate(p: Pts, cfg: RunConfig) -> Iterator[Trajectory]:
    """Yield one trajectory per run, stopping at the final location, the stop condition or the horizon."""
    m = _Machine(p, cfg.stop)
    for runs in _batches(RunConfig(cfg.runs, cfg.max_steps, cfg.seed, cfg.stop)):
        X, L = m.initial(cfg.seed, runs)
        hist_X, hist_L = [X], [L]
        hit = np.full(len(runs), -1, dtype=np.int64)
        for k in range(cfg.max_steps + 1):
            done = m.stopped(X, L) & (hit < 0)
            hit[done] = k
            if k == cfg.max_steps or (hit >= 0).all():
                break
            X, L, _ = m.step(cfg.seed, runs, k, X, L, hit < 0)
            hist_X.append(X)
            hist_L.append(L)
        for r, run in enumerate(runs):
            end = hit[r] if hit[r] >= 0 else len(hist_X) - 1
            confs = tuple(Configuration(p.locations[hist_L[k][r]], tuple(hist_X[k][r].tolist()), k)
                          for k in range(end + 1))
            yield Trajectory(int(run), confs, int(hit[r]) if hit[r] >= 0 else None)


def _summarize(values: np.ndarray, runs: int, truncated: int, flag: bool) -> Estimate:
    n = len(values)
    frac = truncated / runs
    if n == 0:
        return Estimate(math.nan, math.nan, frac, runs, 0, True)
    first = values[0]
    if np.all(values == first):
        return Estimate(float(first), 0.0, frac, runs, n, flag)
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return Estimate(mean, math.sqrt(var / n), frac, runs, n, flag)


def _by_location(p: Pts, expr) -> dict[int, Polynomial]:
    expr = expr if isinstance(expr, LocPoly) else LocPoly(p, expr)
    return {i: expr[l] for i, l in enumerate(p.locations)}


def estimate_expectation(p: Pts, cfg: RunConfig, expr: LocPoly | Polynomial | str,
                         at: int | str = "stop") -> Estimate:
    """Sample mean and standard error of ``expr`` at step ``at`` or at the stopping time.

    At a fixed step every run is advanced exactly ``at`` steps (the final
    location loops on itself).  At ``"stop"`` runs that reach the horizon
    are excluded; above 1% of them the estimate is flagged unreliable.
    ``expr`` may use ``k``, which is the step count at evaluation.
    """
    if at != "stop":
        return estimate_at_steps(p, cfg, expr, [int(at)])[0]
    polys = _by_location(p, expr)

    def batch(runs):
        m = _engine(p, cfg, cfg.stop)
        state = m.start(cfg.seed, runs)
        hit = np.full(len(runs), -1, dtype=np.int64)
        vals = np.zeros(len(runs))
        for k in range(cfg.max_steps + 1):
            new = m.done(state) & (hit < 0)
            if new.any():
                hit[new] = k
                sub = _take(state, new)
                vals[new] = m.evaluate(polys, sub, _loc_keys(m, sub), k)
            if k == cfg.max_steps or (hit >= 0).all():
                break
            state, _ = m.advance(cfg.seed, runs, k, state, hit < 0)
        keep = hit >= 0
        return vals[keep], int((~keep).sum())

    parts = _map_batches(cfg, batch)
    values = np.concatenate([v for v, _ in parts])
    truncated = sum(t for _, t in parts)
    flag = truncated / cfg.runs > UNRELIABLE_TRUNCATION
    return _summarize(values, cfg.runs, truncated, flag)


def estimate_at_steps(p: Pts, cfg: RunConfig, expr: LocPoly | Polynomial | str,
                      steps: Sequence[int]) -> list[Estimate]:
    """Estimates of ``expr`` at each of ``steps`` from a single set of runs."""
    if any(k < 0 for k in steps):
        raise ValueError("steps must be nonnegative")
    polys = _by_location(p, expr)
    wanted = sorted(set(steps))

    def batch(runs):
        m = _engine(p, cfg, None)
        state = m.start(cfg.seed, runs)
        alive = np.ones(len(runs), dtype=bool)
        out = {}
        for k in range(wanted[-1] + 1):
            if k in wanted:
                out[k] = m.evaluate(polys, state, _loc_keys(m, state), k)
            if k < wanted[-1]:
                state, _ = m.advance(cfg.seed, runs, k, state, alive)
        return out

    parts = _map_batches(cfg, batch)
    return [_summarize(np.concatenate([part[k] for part in parts]), cfg.runs, 0, False)
            for k in steps]


def estimate_stopping_time(p: Pts, cfg: RunConfig) -> Estimate:
    """Expected number of steps until the stop condition, from the step counter."""
    return estimate_expectation(p, cfg, Polynomial.var(STEP_VAR), "stop")


def _report_pieces(p: Pts, report: InvariantReport) -> dict[int, Polynomial]:
    names = tuple(p.variables) + (STEP_VAR,)
    out = {}
    for piece in report.preexp_pieces:
        text = piece.get("preexp", piece.get("poly"))
        out[int(piece["transition"])] = parse_polynomial(text, names)
    return out


def estimate_martingale_drift(p: Pts, cfg: RunConfig, report: InvariantReport | LocPoly,
                              k_max: int) -> list[Estimate]:
    """Estimates of E(P(X^{k+1}, L^{k+1}) - preE(P)(X^k, L^k)) for k = 0..k_max.

    The pre-expectation piece is the one of the transition taken at step
    ``k``, read from the report; a bare ``LocPoly`` has its pieces computed
    here.  Every estimate should be zero within noise.
    """
    if isinstance(report, LocPoly):
        P = _by_location(p, report)
        pieces = {pc.transition: pc.poly for pc in preexp_pts(p, report, shift_step=True).pieces}
    else:
        P = _by_location(p, LocPoly(p, report.seed))
        pieces = _report_pieces(p, report)

    def batch(runs):
        m = _engine(p, cfg, None)
        state = m.start(cfg.seed, runs)
        alive = np.ones(len(runs), dtype=bool)
        rows = []
        for k in range(k_max + 1):
            nxt, choice = m.advance(cfg.seed, runs, k, state, alive)
            pre = m.evaluate(pieces, state, choice, k)
            rows.append(m.evaluate(P, nxt, _loc_keys(m, nxt), k + 1) - pre)
            state = nxt
        return np.stack(rows)

    incs = np.concatenate(_map_batches(cfg, batch), axis=1)
    return [_summarize(incs[k], cfg.runs, 0, False) for k in range(k_max + 1)]


def sample_successors(p: Pts, location: str, point: Mapping[str, float], n: int,
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent one-step successors of a fixed configuration.

    Returns the successor valuations (rows follow ``p.variables``) and their
    location indices into ``p.locations``.
    """
    m = _Machine(p, None)
    X = np.tile(np.array([float(point[v]) for v in p.variables]), (n, 1))
    L = np.full(n, m.loc_index[location], dtype=np.int64)
    X, L, _ = m.step(seed, np.arange(n, dtype=np.int64), 0, X, L, np.ones(n, dtype=bool))
    return X, L

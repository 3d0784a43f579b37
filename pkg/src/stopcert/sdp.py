"""A small dense semidefinite feasibility solver.

Problem: find parameters ``y`` with ``E y = f`` that make every block
``C_i + sum_j y_j A_ij`` positive semidefinite, maximizing the margin ``t``
with every block ``>= t I`` (``t`` is capped at ``t_cap``).

Equalities are eliminated first (``y = y0 + N z``), parameter directions that
move no block are dropped, and the remaining linear-matrix-inequality problem

    maximize t  subject to  S(w) = C - sum_k w_k F_k  >= 0

is solved by a primal-dual path-following interior-point method with the HKM
search direction and Mehrotra's predictor-corrector step.  A negative optimal
margin comes with the primal iterate ``X >= 0`` as a witness: it satisfies
``<F_k, X> = 0`` for the free directions and ``<I, X> = 1``, so ``<C, X>``
bounds every achievable margin from above.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class SdpDimensionError(ValueError):
    pass


@dataclass
class SdpProblem:
    """Affine block-diagonal LMI with linear equalities on the parameters.

    ``blocks[i] = (C_i, A_i)`` where ``C_i`` is ``(s, s)`` and ``A_i`` is
    ``(m, s, s)``; ``eq_A`` is ``(r, m)`` and ``eq_b`` has length ``r``.
    """

    m: int
    blocks: list[tuple[np.ndarray, np.ndarray]]
    eq_A: np.ndarray | None = None
    eq_b: np.ndarray | None = None
    block_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        for i, (C, A) in enumerate(self.blocks):
            C = np.asarray(C, dtype=float)
            A = np.asarray(A, dtype=float).reshape((self.m,) + C.shape)
            if C.ndim != 2 or C.shape[0] != C.shape[1]:
                raise SdpDimensionError(f"block {i} is not square")
            if A.shape != (self.m,) + C.shape:
                raise SdpDimensionError(f"block {i} has {A.shape[0]} coefficient matrices, expected {self.m}")
            self.blocks[i] = (C, A)
        if self.eq_A is None:
            self.eq_A = np.zeros((0, self.m))
            self.eq_b = np.zeros(0)
        self.eq_A = np.asarray(self.eq_A, dtype=float)
        self.eq_b = np.asarray(self.eq_b, dtype=float).reshape(-1)
        if self.eq_A.size == 0:
            self.eq_A = np.zeros((0, self.m))
        if self.eq_A.ndim != 2 or self.eq_A.shape[1] != self.m:
            raise SdpDimensionError(f"equality matrix must have {self.m} columns")
        if self.eq_A.shape[0] != self.eq_b.shape[0]:
            raise SdpDimensionError("equality matrix and right-hand side disagree")

    def block_values(self, y: np.ndarray) -> list[np.ndarray]:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise SdpDimensionError(f"parameter vector has shape {y.shape}, expected ({self.m},)")
        return [C + np.tensordot(y, A, axes=1) for C, A in self.blocks]

    def scaled(self, c: float) -> "SdpProblem":
        return SdpProblem(self.m, [(c * C, c * A) for C, A in self.blocks],
                          c * self.eq_A, c * self.eq_b, list(self.block_names))

    def to_json(self) -> dict:
        """Dense dump for cross-checking against other solvers."""
        return {
            "m": self.m,
            "blocks": [{"name": (self.block_names[i] if i < len(self.block_names) else f"block{i}"),
                        "C": C.tolist(), "A": A.tolist()} for i, (C, A) in enumerate(self.blocks)],
            "eq_A": self.eq_A.tolist(),
            "eq_b": self.eq_b.tolist(),
            "objective": "maximize t subject to every block >= t*I",
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass
class SdpOptions:
    max_iters: int = 100
    tol: float = 1e-8
    t_cap: float = 1.0
    tol_margin: float = 1e-7
    step_fraction: float = 0.98
    verbose: bool = False


@dataclass
class SdpSolution:
    y: np.ndarray
    t: float
    status: str
    iterations: int
    witness: dict | None = None
    min_eigenvalues: list[float] = field(default_factory=list)
    eq_residual: float = 0.0


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.size == 0:
        return float("inf")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(M)[0])


def _nullspace(E: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, int]:
    m = E.shape[1]
    if E.shape[0] == 0:
        return np.eye(m), 0
    _, s, vt = np.linalg.svd(E)
    if s.size == 0:
        return np.eye(m), 0
    rank = int(np.sum(s > rtol * max(1.0, s[0])))
    return vt[rank:].T.copy(), rank


def solve(p: SdpProblem, opts: SdpOptions | None = None) -> SdpSolution:
    """Maximize the PSD margin of ``p``; see the module docstring."""
    opts = opts or SdpOptions()
    m = p.m
    E, f = p.eq_A, p.eq_b
    if E.shape[0]:
        y0, *_ = np.linalg.lstsq(E, f, rcond=None)
        resid = f - E @ y0
        scale = 1.0 + float(np.max(np.abs(f))) if f.size else 1.0
        if float(np.max(np.abs(resid))) > 1e-9 * scale:
            return SdpSolution(y0, float("-inf"), "infeasible", 0,
                               witness={"kind": "inconsistent-equalities",
                                        "combination": resid.tolist(),
                                        "value": float(resid @ f)})
    else:
        y0 = np.zeros(m)
    N, _ = _nullspace(E)

    # blocks in the reduced variables z, then drop directions that move nothing
    Cs = [C + np.tensordot(y0, A, axes=1) for C, A in p.blocks]
    Bs = [np.tensordot(N.T, A, axes=1) for _, A in p.blocks]
    if N.shape[1] and Bs:
        stacked = np.concatenate([B.reshape(N.shape[1], -1) for B in Bs], axis=1)
        U, s, _ = np.linalg.svd(stacked, full_matrices=False)
        keep = int(np.sum(s > 1e-10 * max(1.0, s[0]))) if s.size else 0
        V = U[:, :keep]
    else:
        V = np.zeros((N.shape[1], 0))
    Bs = [np.tensordot(V.T, B, axes=1) for B in Bs]
    nz = V.shape[1]

    # LMI data: S = C - sum_k w_k F_k with w = (u, t); the last block caps t
    Cmat = [(C + C.T) / 2 for C in Cs] + [np.array([[opts.t_cap]])]
    F = [np.concatenate([-(B + np.transpose(B, (0, 2, 1))) / 2, np.eye(C.shape[0])[None]], axis=0)
         for B, C in zip(Bs, Cs)]
    cap = np.zeros((nz + 1, 1, 1))
    cap[-1, 0, 0] = 1.0
    F.append(cap)
    b = np.zeros(nz + 1)
    b[-1] = 1.0

    w, X, S, iters, converged = _ipm(Cmat, F, b, opts)

    u, t_dual = w[:nz], w[-1]
    y = y0 + N @ (V @ u)
    vals = p.block_values(y)
    mins = [min_eigenvalue((B + B.T) / 2) for B in vals]
    t_true = min(mins + [opts.t_cap]) if mins else opts.t_cap
    eq_res = float(np.max(np.abs(E @ y - f))) if E.shape[0] else 0.0
    primal_bound = float(sum(np.sum(Ci * Xi) for Ci, Xi in zip(Cmat, X)))
    witness = {"kind": "dual-psd", "blocks": [Xi.tolist() for Xi in X[:-1]],
               "bound": primal_bound}
    if not converged:
        status = "max-iterations"
        if primal_bound < -opts.tol_margin and _primal_feasible(F, X, b, 1e-6):
            status = "infeasible"
        return SdpSolution(y, t_true, status, iters, witness, mins, eq_res)
    if primal_bound < -opts.tol_margin and _primal_feasible(F, X, b, 1e-7):
        return SdpSolution(y, t_true, "infeasible", iters, witness, mins, eq_res)
    return SdpSolution(y, t_true, "feasible", iters, None, mins, eq_res)


def _primal_feasible(F, X, b, tol) -> bool:
    AX = sum(np.einsum("kij,ij->k", Fi, Xi) for Fi, Xi in zip(F, X))
    if np.max(np.abs(AX - b)) > tol * (1 + np.max(np.abs(b))):
        return False
    return all(min_eigenvalue((Xi + Xi.T) / 2) >= -tol for Xi in X)


def _max_step(Xs: Sequence[np.ndarray], dXs: Sequence[np.ndarray]) -> float:
    alpha = np.inf
    for Xb, dXb in zip(Xs, dXs):
        try:
            L = np.linalg.cholesky(Xb)
            Li = np.linalg.inv(L)
            M = Li @ dXb @ Li.T
        except np.linalg.LinAlgError:
            lam, Q = np.linalg.eigh(Xb)
            lam = np.maximum(lam, 1e-300)
            R = Q / np.sqrt(lam)
            M = R.T @ dXb @ R
        lo = np.linalg.eigvalsh((M + M.T) / 2)[0]
        if lo < 0:
            alpha = min(alpha, -1.0 / lo)
    return alpha


def _ipm(C, F, b, opts: SdpOptions):
    m = b.size
    X = [np.eye(c.shape[0]) for c in C]
    S = [np.eye(c.shape[0]) for c in C]
    w = np.zeros(m)
    n_total = sum(c.shape[0] for c in C)
    bnorm = 1 + np.linalg.norm(b)
    cnorm = 1 + np.sqrt(sum(np.sum(c * c) for c in C))

    def A_op(Ms):
        return sum(np.einsum("kij,ij->k", Fi, Mi) for Fi, Mi in zip(F, Ms))

    def At_op(v):
        return [np.tensordot(v, Fi, axes=1) for Fi in F]

    converged = False
    it = 0
    best = (np.inf, w, X, S)
    stall = 0
    for it in range(1, opts.max_iters + 1):
        try:
            Sinv = [np.linalg.inv(Si) for Si in S]
        except np.linalg.LinAlgError:
            break
        rp = b - A_op(X)
        Rd = [Ci - Si - Ai for Ci, Si, Ai in zip(C, S, At_op(w))]
        mu = sum(np.sum(Xi * Si) for Xi, Si in zip(X, S)) / n_total
        pobj = sum(np.sum(Ci * Xi) for Ci, Xi in zip(C, X))
        dobj = float(b @ w)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / bnorm
        dinf = np.sqrt(sum(np.sum(R * R) for R in Rd)) / cnorm
        if opts.verbose:
            print(f"it {it:3d} pobj {pobj: .6e} dobj {dobj: .6e} mu {mu:.2e} "
                  f"pinf {pinf:.2e} dinf {dinf:.2e}", file=sys.stderr)
        merit = max(gap, pinf, dinf)
        if merit < best[0]:
            best, stall = (merit, w, X, S), 0
        else:
            stall += 1
        if merit < opts.tol:
            converged = True
            break
        if stall >= 5:
            # rounding errors dominate once the iterates stop improving
            break

        # Schur complement M_kl = tr(F_k X F_l S^-1)
        M = np.zeros((m, m))
        for Fi, Xi, Si in zip(F, X, Sinv):
            G = np.einsum("ij,ljk,km->lim", Xi, Fi, Si)
            M += Fi.reshape(m, -1) @ np.transpose(G, (0, 2, 1)).reshape(m, -1).T
        M = (M + M.T) / 2
        try:
            Lm = np.linalg.cholesky(M)
            solve_M = lambda r: np.linalg.solve(Lm.T, np.linalg.solve(Lm, r))
        except np.linalg.LinAlgError:
            solve_M = lambda r: np.linalg.lstsq(M, r, rcond=None)[0]

        XRdS = [Xi @ R @ Si for Xi, R, Si in zip(X, Rd, Sinv)]

        def direction(Rc):
            # centering target X S = Rc, i.e. dX = Rc S^-1 - X - X dS S^-1
            RcS = [R @ Si for R, Si in zip(Rc, Sinv)]
            rhs = rp - A_op(RcS) + A_op(X) + A_op(XRdS)
            dw = solve_M(rhs)
            dS = [R - A for R, A in zip(Rd, At_op(dw))]
            dX = [RS - Xi - Xi @ dSi @ Si for RS, Xi, dSi, Si in zip(RcS, X, dS, Sinv)]
            dX = [(D + D.T) / 2 for D in dX]
            return dX, dS, dw

        zero = [np.zeros_like(Xi) for Xi in X]
        dXa, dSa, dwa = direction(zero)
        ap = min(1.0, _max_step(X, dXa))
        ad = min(1.0, _max_step(S, dSa))
        mu_aff = sum(np.sum((Xi + ap * dXi) * (Si + ad * dSi))
                     for Xi, dXi, Si, dSi in zip(X, dXa, S, dSa)) / n_total
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        Rc = [sigma * mu * np.eye(Xi.shape[0]) - dXi @ dSi for Xi, dXi, dSi in zip(X, dXa, dSa)]
        dX, dS, dw = direction(Rc)
        ap = min(1.0, opts.step_fraction * _max_step(X, dX))
        ad = min(1.0, opts.step_fraction * _max_step(S, dS))
        X = [Xi + ap * D for Xi, D in zip(X, dX)]
        S = [Si + ad * D for Si, D in zip(S, dS)]
        w = w + ad * dw
        X = [(Xi + Xi.T) / 2 for Xi in X]
        S = [(Si + Si.T) / 2 for Si in S]
    if not converged:
        merit, w, X, S = best
        converged = merit < 10 * opts.tol
    return w, X, S, it, converged

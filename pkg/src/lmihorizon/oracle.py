"""Exact ground truth for the feasibility experiments.

Two independent references: a polytopic dynamic-programming computation of
the maximal robust controllable set (vertex-enumerated uncertainty,
Fourier-Motzkin input elimination, LP redundancy pruning) and an affine
quadratic backward sweep for unconstrained nominal cost lower bounds.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .model import Problem

_PRUNE_TOL = 1e-9


@dataclass(frozen=True)
class Polytope:
    """H-representation {x : H x <= h} with unit-norm rows."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != h.shape[0]:
            raise ValueError("H and h row counts differ")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def num_rows(self) -> int:
        return self.H.shape[0]

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Polytope":
        return Polytope(H=np.array(d["H"]), h=np.array(d["h"]))

    @staticmethod
    def empty(dim: int) -> "Polytope":
        return Polytope(H=np.zeros((1, dim)), h=np.array([-1.0]))

    def is_empty_marker(self) -> bool:
        return bool(np.any((np.linalg.norm(self.H, axis=1) < 1e-12) & (self.h < 0)))


def contains(poly: Polytope, x, tol: float = 1e-9) -> bool:
    """Closed-set membership test."""
    x = np.asarray(x, dtype=float)
    return bool(np.all(poly.H @ x <= poly.h + tol))


def grid(lo: float, hi: float, count: int, dim: int = 2) -> np.ndarray:
    """Equidistant grid on [lo, hi]^dim, row-major over the coordinates
    (the first point is (lo, ..., lo))."""
    if count < 2:
        raise ValueError("grid needs at least two points per axis")
    axis = np.linspace(lo, hi, count)
    pts = np.array(list(itertools.product(axis, repeat=dim)))
    return pts


def _normalize_rows(H: np.ndarray, h: np.ndarray):
    norms = np.linalg.norm(H, axis=1)
    keep_rows, out_H, out_h = [], [], []
    for i in range(H.shape[0]):
        if norms[i] < 1e-12:
            if h[i] < -1e-12:
                return None  # 0 <= negative: empty set
            continue  # trivially true row
        out_H.append(H[i] / norms[i])
        out_h.append(h[i] / norms[i])
    return np.array(out_H), np.array(out_h)


def _dedup_rows(H: np.ndarray, h: np.ndarray):
    """Drop duplicate directions, keeping the tightest offset."""
    order = np.lexsort(np.column_stack([H, h]).T)
    keep = []
    for idx in order:
        dup = False
        for j in keep:
            if np.max(np.abs(H[idx] - H[j])) < 1e-12:
                if h[idx] >= h[j] - 1e-12:
                    dup = True
                break
        if not dup:
            keep.append(idx)
    keep.sort()
    return H[keep], h[keep]


def _lp_max(c: np.ndarray, H: np.ndarray, h: np.ndarray) -> float | None:
    """max c'x over {Hx <= h}; None when the LP is unbounded/failed."""
    res = linprog(-c, A_ub=H, b_ub=h, bounds=[(None, None)] * H.shape[1], method="highs")
    if res.status == 3:
        return None
    if not res.success:
        return None
    return float(-res.fun)


def prune(poly: Polytope) -> Polytope:
    """Remove redundant rows by LP, after normalization and deduplication."""
    nz = _normalize_rows(poly.H, poly.h)
    if nz is None:
        return Polytope.empty(poly.dim)
    H, h = _dedup_rows(*nz)
    if H.shape[0] == 0:
        raise ValueError("cannot prune an unbounded (empty H) polytope")
    keep = np.ones(H.shape[0], dtype=bool)
    for i in range(H.shape[0]):
        mask = keep.copy()
        mask[i] = False
        if not mask.any():
            continue
        val = _lp_max(H[i], H[mask], h[mask])
        if val is None:
            continue  # dropping row i would unbound this direction: keep it
        if val <= h[i] + _PRUNE_TOL:
            keep[i] = False
    if not keep.any():
        keep[0] = True
    return Polytope(H=H[keep], h=h[keep])


def poly_subset(inner: Polytope, outer: Polytope, tol: float = 1e-7) -> bool:
    """inner subset of outer, decided by one support LP per outer row."""
    for i in range(outer.num_rows):
        val = _lp_max(outer.H[i], inner.H, inner.h)
        if val is None or val > outer.h[i] + tol:
            return False
    return True


def _fourier_motzkin(rows_A: np.ndarray, rows_b: np.ndarray, col: int):
    """Eliminate variable `col` from {A x <= b}."""
    a = rows_A[:, col]
    rest = np.delete(rows_A, col, axis=1)
    pos = np.where(a > 1e-12)[0]
    neg = np.where(a < -1e-12)[0]
    zero = np.where(np.abs(a) <= 1e-12)[0]
    out_A = [rest[zero]]
    out_b = [rows_b[zero]]
    for i in pos:
        for j in neg:
            # nonnegative combination (-a_j) row_i + a_i row_j has zero
            # coefficient on the eliminated variable
            out_A.append(((-a[j]) * rest[i] + a[i] * rest[j])[None, :])
            out_b.append(np.array([(-a[j]) * rows_b[i] + a[i] * rows_b[j]]))
    return np.vstack(out_A), np.concatenate(out_b)


def _vertex_loops(problem: Problem):
    """Closed-loop (f, A, B) triples at every vertex of the channel box."""
    st = problem.stages[-1]
    cone = problem.cone
    if np.any(st.D32 != 0.0):
        raise ValueError("vertex enumeration requires D32 = 0")
    if cone.num_channels == 0:
        return [(st.f, st.A, st.B1)]
    out = []
    for signs in itertools.product((1.0, -1.0), repeat=cone.num_channels):
        delta = np.array(signs) * cone.bounds
        out.append(st.closed_loop(delta, cone))
    return out


def _constraint_rows(problem: Problem):
    """Scalar constraint outputs as linear rows on (x, u): the pair
    +/-(C2 x + D21 u) <= 1 -/+ g2.  Multi-row (ball) outputs are rejected."""
    st = problem.stages[-1]
    n, m = st.n, st.m
    state_A, state_b, mixed_A, mixed_b = [], [], [], []
    for g2, C2, D21 in st.constraints:
        if C2.shape[0] != 1:
            raise ValueError("the polytopic oracle needs scalar constraint outputs")
        for sgn in (1.0, -1.0):
            row = np.concatenate([sgn * C2[0], sgn * D21[0]])
            rhs = 1.0 - sgn * g2[0]
            if np.max(np.abs(row[n:])) <= 1e-14:
                state_A.append(row[:n])
                state_b.append(rhs)
            else:
                mixed_A.append(row)
                mixed_b.append(rhs)
    return (
        np.array(state_A).reshape(-1, n),
        np.array(state_b),
        np.array(mixed_A).reshape(-1, n + m),
        np.array(mixed_b),
    )


def state_constraint_polytope(problem: Problem) -> Polytope:
    """The pure-state constraint rows as a polytope (the DP seed)."""
    state_A, state_b, _, _ = _constraint_rows(problem)
    if state_A.shape[0] == 0:
        raise ValueError("problem has no pure state constraints to seed the oracle")
    return prune(Polytope(H=state_A, h=state_b))


def robust_pre(X: Polytope, problem: Problem) -> Polytope:
    """States that satisfy the constraints and admit an input steering into
    X for every vertex of the uncertainty box.

    The target conditions are stacked per vertex in (x, u) space together
    with the input rows, the inputs are eliminated by Fourier-Motzkin and
    the result is pruned by LP and intersected with the state rows.
    """
    n, m = problem.n, problem.m
    state_A, state_b, mixed_A, mixed_b = _constraint_rows(problem)
    rows_A = [mixed_A] if mixed_A.size else []
    rows_b = [mixed_b] if mixed_b.size else []
    for f_v, A_v, B_v in _vertex_loops(problem):
        rows_A.append(np.hstack([X.H @ A_v, X.H @ B_v]))
        rows_b.append(X.h - X.H @ f_v)
    A = np.vstack(rows_A)
    b = np.concatenate(rows_b)
    for _ in range(m):
        A, b = _fourier_motzkin(A, b, n)  # eliminate the first input column
        nz = _normalize_rows(A, b)
        if nz is None:
            return Polytope.empty(n)
        A, b = _dedup_rows(*nz)
    H = np.vstack([state_A, A]) if A.size else state_A
    h = np.concatenate([state_b, b]) if b.size else state_b
    return prune(Polytope(H=H, h=h))


@dataclass
class OracleTrace:
    iterations: int
    row_counts: list[int]
    converged: bool


def feasible_set(
    problem: Problem, max_iters: int = 100, tol: float = 1e-7, return_trace: bool = False
):
    """Maximal set of initial states that can satisfy the constraints
    forever against every admissible uncertainty realization.

    Iterates the robust one-step predecessor map from the state-constraint
    box; the sets shrink monotonically, so convergence is declared when the
    previous iterate is contained in the new one (mutual containment).
    """
    if problem.n > 3:
        raise ValueError("the polytopic oracle is limited to state dimension <= 3")
    X = state_constraint_polytope(problem)
    trace = OracleTrace(iterations=0, row_counts=[X.num_rows], converged=False)
    for it in range(1, max_iters + 1):
        Xn = robust_pre(X, problem)
        trace.iterations = it
        trace.row_counts.append(Xn.num_rows)
        if Xn.is_empty_marker():
            trace.converged = True
            X = Xn
            break
        if poly_subset(X, Xn, tol=tol):
            trace.converged = True
            X = Xn
            break
        X = Xn
    if not trace.converged:
        raise RuntimeError(
            f"oracle did not converge in {max_iters} iterations (row counts {trace.row_counts})"
        )
    return (X, trace) if return_trace else X


# ---------------------------------------------------------------------------
# Unconstrained affine-quadratic backward sweep
# ---------------------------------------------------------------------------


@dataclass
class RiccatiResult:
    P: list[np.ndarray]  # (1+n)x(1+n) value matrices, P[N] = Pf
    K: list[np.ndarray]  # optimal affine gains u = K (1, x)
    cost: float  # optimal unconstrained cost at x_bar


def riccati_sweep(problem: Problem) -> RiccatiResult:
    """Exact unconstrained optimum of the nominal affine-quadratic problem.

    Backward recursion on the augmented state (1, x); the result lower
    bounds the constrained optimum and anchors the cost-tightness checks.
    """
    if problem.Pf is None:
        raise ValueError("the sweep needs a terminal cost matrix")
    N, n, m = problem.N, problem.n, problem.m
    d = 1 + n
    P = [None] * (N + 1)
    K = [None] * N
    P[N] = 0.5 * (problem.Pf + problem.Pf.T)
    for k in range(N - 1, -1, -1):
        st = problem.stages[k]
        F = np.vstack([np.eye(1, d), np.hstack([st.f[:, None], st.A])])
        G = np.vstack([np.zeros((1, m)), st.B1])
        Cy = np.hstack([st.g1[:, None], st.C1])
        R = st.D11.T @ st.D11 + G.T @ P[k + 1] @ G
        Sx = st.D11.T @ Cy + G.T @ P[k + 1] @ F
        cond = np.linalg.cond(R)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(f"singular input weighting at stage {k} (cond {cond:.2e})")
        Kk = -np.linalg.solve(R, Sx)
        Pk = Cy.T @ Cy + F.T @ P[k + 1] @ F + Sx.T @ Kk
        P[k] = 0.5 * (Pk + Pk.T)
        K[k] = Kk
    v = np.concatenate([[1.0], problem.x_bar])
    return RiccatiResult(P=P, K=K, cost=float(v @ P[0] @ v))


def save_polytope(poly: Polytope, path) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(poly.to_dict(), fp, indent=1)


def load_polytope(path) -> Polytope:
    with open(path, "r", encoding="utf-8") as fp:
        return Polytope.from_dict(json.load(fp))

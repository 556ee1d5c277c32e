"""Dense primal-dual interior-point solver for small block-diagonal SDPs.

Solves programs of the form

    maximize  c'x   s.t.   G0_b + sum_j x_j G_{b,j}  PSD  for every block b

(scalar nonnegativity is a 1x1 block, linear equalities are eliminated up
front).  The method is infeasible-start path following with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step; the Newton system is
condensed onto the decision variables and factored with a dense Cholesky.
Problems here have a few dozen variables and block sizes below ~20, so
dense linear algebra is both the simplest and the most robust choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lmi import BlockLMI, ConicProgram

OPTIMAL = "optimal"
INFEASIBLE_CERTIFIED = "infeasible_certified"
NUMERICAL_FAILURE = "numerical_failure"
ITERATION_LIMIT = "iteration_limit"

_REG = 1e-10  # static Schur regularization


@dataclass
class SolverOptions:
    # feas_eps is the strict-feasibility threshold on phase-I margins.  It
    # sits just above the solver's margin accuracy (~1e-10 at tol=1e-8):
    # near the edge of the certifiable region the true achievable margins
    # shrink to the 1e-8 scale, and a coarser threshold misclassifies
    # genuinely certifiable extreme states.
    tol: float = 1e-8
    max_iters: int = 200
    feas_eps: float = 1e-9
    step_fraction: float = 0.98

    def __post_init__(self):
        if not (0.0 < self.tol < 1.0):
            raise ValueError("tol must lie in (0, 1)")
        if self.feas_eps <= 0.0:
            raise ValueError("feas_eps must be positive")


@dataclass
class Solution:
    status: str
    x: np.ndarray
    objective: float
    min_eig_by_block: np.ndarray
    iterations: int
    residuals: tuple[float, float, float]  # relative (primal, dual, gap)


@dataclass
class ResidualReport:
    """Margins of a point: min eigenvalue per PSD/nonneg block, and the
    negated worst violation for equality blocks."""

    names: list[str]
    senses: list[str]
    values: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(self.values.min()) if self.values.size else np.inf


class SolverFailure(RuntimeError):
    pass


def residuals(program: ConicProgram, x: np.ndarray) -> ResidualReport:
    names, senses, vals = [], [], []
    for b in program.blocks:
        G = b.evaluate(x)
        names.append(b.name)
        senses.append(b.sense)
        if b.sense == "zero":
            vals.append(-float(np.max(np.abs(G))) if G.size else 0.0)
        elif b.dim == 1:
            vals.append(float(G[0, 0]))
        else:
            vals.append(float(np.linalg.eigvalsh(0.5 * (G + G.T))[0]))
    return ResidualReport(names, senses, np.array(vals))


def _eig_sqrt(M: np.ndarray):
    """Symmetric PSD square root and inverse square root via eigh."""
    d, Q = np.linalg.eigh(0.5 * (M + M.T))
    d = np.maximum(d, 1e-300)
    rt = np.sqrt(d)
    return (Q * rt) @ Q.T, (Q / rt) @ Q.T


def _nt_scaling(X: np.ndarray, S: np.ndarray):
    """NT scaling point W with W S W = X, its square roots and the scaled
    eigensystem of lambda = W^{-1/2} X W^{-1/2}."""
    Shalf, Sihalf = _eig_sqrt(S)
    Thalf, _ = _eig_sqrt(Shalf @ X @ Shalf)
    W = Sihalf @ Thalf @ Sihalf
    W = 0.5 * (W + W.T)
    Whalf, Wihalf = _eig_sqrt(W)
    lam = Wihalf @ X @ Wihalf
    lam = 0.5 * (lam + lam.T)
    dlam, Qlam = np.linalg.eigh(lam)
    dlam = np.maximum(dlam, 1e-300)
    return W, Whalf, Wihalf, dlam, Qlam


def _max_step(P: np.ndarray, D: np.ndarray) -> float:
    """Largest alpha with P + alpha D PSD, for PD P; 0 on numerical trouble."""
    if not np.all(np.isfinite(D)):
        return 0.0
    try:
        L = np.linalg.cholesky(P)
        Li = np.linalg.inv(L)
        K = Li @ D @ Li.T
    except np.linalg.LinAlgError:
        d, Q = np.linalg.eigh(P)
        d = np.maximum(d, 1e-300)
        Li = (Q / np.sqrt(d)) @ Q.T
        K = Li @ D @ Li.T
    try:
        lo = float(np.linalg.eigvalsh(0.5 * (K + K.T))[0])
    except np.linalg.LinAlgError:
        return 0.0
    if lo >= 0.0:
        return np.inf
    return -1.0 / lo


class _Block:
    """Pre-stacked coefficient tensors of one PSD block."""

    __slots__ = ("g0", "idx", "gs", "dim")

    def __init__(self, b: BlockLMI):
        self.g0 = b.g0
        self.dim = b.dim
        self.idx = np.array([j for j, _ in b.terms], dtype=int)
        if b.terms:
            self.gs = np.stack([C for _, C in b.terms])
        else:
            self.gs = np.zeros((0, b.dim, b.dim))

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.idx.size:
            return self.g0 + np.tensordot(x[self.idx], self.gs, axes=1)
        return self.g0.copy()


def _split_equalities(program: ConicProgram):
    ineq = [b for b in program.blocks if b.sense in ("psd", "nonneg")]
    eq = [b for b in program.blocks if b.sense == "zero"]
    return ineq, eq


def _eliminate_equalities(program: ConicProgram, eq: list[BlockLMI]):
    """Substitute x = x0 + F z for the affine solution set of the equality
    blocks; returns (reduced program, x0, F) or None if inconsistent."""
    nv = program.num_vars
    rows, rhs = [], []
    for b in eq:
        nr, nc = b.g0.shape
        for r in range(nr):
            for c in range(nc):
                row = np.zeros(nv)
                for j, C in b.terms:
                    row[j] = C[r, c]
                rows.append(row)
                rhs.append(-b.g0[r, c])
    A = np.array(rows)
    bvec = np.array(rhs)
    x0, *_ = np.linalg.lstsq(A, bvec, rcond=None)
    if np.max(np.abs(A @ x0 - bvec)) > 1e-9 * (1.0 + np.max(np.abs(bvec))):
        return None
    _, sv, Vt = np.linalg.svd(A)
    rank = int(np.sum(sv > 1e-12 * (sv[0] if sv.size else 1.0)))
    F = Vt[rank:].T  # (nv, nz)
    blocks = []
    for b in program.blocks:
        if b.sense == "zero":
            continue
        g0 = b.evaluate(x0)
        terms = []
        for z in range(F.shape[1]):
            C = np.zeros_like(b.g0)
            for j, Cj in b.terms:
                if F[j, z] != 0.0:
                    C = C + F[j, z] * Cj
            if np.any(C != 0.0):
                terms.append((z, C))
        blocks.append(BlockLMI(name=b.name, sense=b.sense, g0=g0, terms=tuple(terms)))
    red = ConicProgram(c=F.T @ program.c, blocks=blocks, layout=None)
    return red, x0, F


def solve(program: ConicProgram, opts: SolverOptions | None = None) -> Solution:
    """Maximize c'x over the program's PSD and nonnegativity blocks."""
    opts = opts or SolverOptions()
    ineq, eq = _split_equalities(program)
    if eq:
        reduced = _eliminate_equalities(program, eq)
        if reduced is None:
            return Solution(
                status=INFEASIBLE_CERTIFIED,
                x=np.zeros(program.num_vars),
                objective=-np.inf,
                min_eig_by_block=residuals(program, np.zeros(program.num_vars)).values,
                iterations=0,
                residuals=(np.inf, np.inf, np.inf),
            )
        red, x0, F = reduced
        inner = solve(red, opts)
        x = x0 + F @ inner.x
        rep = residuals(program, x)
        return Solution(
            status=inner.status,
            x=x,
            objective=float(program.c @ x),
            min_eig_by_block=rep.values,
            iterations=inner.iterations,
            residuals=inner.residuals,
        )
    return _ipm(program, ineq, opts)


def _ipm(program: ConicProgram, ineq: list[BlockLMI], opts: SolverOptions) -> Solution:
    nv = program.num_vars
    c = program.c
    blocks = [_Block(b) for b in ineq]
    ntot = sum(b.dim for b in blocks)

    def finish(status, x, iters, rels):
        rep = residuals(program, x)
        return Solution(
            status=status,
            x=x,
            objective=float(c @ x),
            min_eig_by_block=rep.values,
            iterations=iters,
            residuals=rels,
        )

    if nv == 0 or not blocks:
        # Nothing to optimize: the origin is the only candidate.
        x = np.zeros(nv)
        rep = residuals(program, x)
        status = OPTIMAL if rep.min_margin >= -opts.tol else INFEASIBLE_CERTIFIED
        return finish(status, x, 0, (0.0, 0.0, 0.0))

    x = np.zeros(nv)
    S, X = [], []
    for b in blocks:
        g0 = b.value(x)
        lo = float(np.linalg.eigvalsh(g0)[0])
        shift = max(0.0, 1.0 - lo)
        S.append(g0 + shift * np.eye(b.dim))
        X.append(np.eye(b.dim))

    cnorm = 1.0 + float(np.max(np.abs(c)))
    status = ITERATION_LIMIT
    rels = (np.inf, np.inf, np.inf)
    it = 0
    err = np.errstate(over="ignore", invalid="ignore")
    err.__enter__()
    for it in range(1, opts.max_iters + 1):
        Gx = [b.value(x) for b in blocks]
        Rd = [Gx[i] - S[i] for i in range(len(blocks))]
        rp = c.copy()
        for i, b in enumerate(blocks):
            if b.idx.size:
                rp[b.idx] += np.einsum("aij,ij->a", b.gs, X[i])
        gap = sum(float(np.tensordot(X[i], S[i])) for i in range(len(blocks)))
        pobj = float(c @ x)
        dobj = sum(float(np.tensordot(blocks[i].g0, X[i])) for i in range(len(blocks)))
        rel_p = float(np.max(np.abs(rp))) / cnorm
        rel_d = max(
            float(np.max(np.abs(Rd[i]))) / (1.0 + float(np.max(np.abs(blocks[i].g0))) )
            for i in range(len(blocks))
        )
        rel_gap = gap / (1.0 + abs(pobj) + abs(dobj))
        rels = (rel_p, rel_d, rel_gap)
        if rel_p <= opts.tol and rel_d <= opts.tol and rel_gap <= opts.tol:
            status = OPTIMAL
            break
        if max(abs(pobj), float(np.max(np.abs(x)))) > 1e13:
            status = NUMERICAL_FAILURE
            break
        # Farkas-style improving ray: X >= 0 with sum_b <G_j, X_b> ~ 0 and
        # sum_b <G0_b, X_b> < 0 certifies infeasibility of the LMIs.
        xnrm = sum(float(np.trace(X[i])) for i in range(len(blocks)))
        if xnrm > 1e8:
            ray = rp - c
            if float(np.max(np.abs(ray))) <= 1e-7 * xnrm and dobj <= -1e-5 * xnrm:
                status = INFEASIBLE_CERTIFIED
                break

        mu = gap / ntot
        scal = []
        try:
            for i in range(len(blocks)):
                scal.append(_nt_scaling(X[i], S[i]))
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            break

        M = np.zeros((nv, nv))
        WGs = []
        for i, b in enumerate(blocks):
            W = scal[i][0]
            if b.idx.size:
                V = np.einsum("ij,ajk,kl->ail", W, b.gs, W, optimize=True)
                WGs.append(V)
                Mloc = np.einsum("aij,bij->ab", b.gs, V, optimize=True)
                M[np.ix_(b.idx, b.idx)] += 0.5 * (Mloc + Mloc.T)
            else:
                WGs.append(None)

        L = None
        reg = _REG
        for _ in range(4):
            try:
                L = np.linalg.cholesky(M + reg * np.eye(nv))
                break
            except np.linalg.LinAlgError:
                reg *= 1e3
        if L is None:
            status = NUMERICAL_FAILURE
            break

        def lyap_rhs(i, sigma_mu, corr):
            _, Whalf, _, dlam, Qlam = scal[i]
            T = -np.diag(dlam**2)
            if sigma_mu:
                T = T + sigma_mu * np.eye(len(dlam))
            if corr is not None:
                T = T - Qlam.T @ corr @ Qlam
            T = 2.0 * T / (dlam[:, None] + dlam[None, :])
            R = Whalf @ (Qlam @ T @ Qlam.T) @ Whalf
            return 0.5 * (R + R.T)

        def newton(sigma_mu, corrs):
            rhs = rp.copy()
            Rt = []
            for i, b in enumerate(blocks):
                W = scal[i][0]
                Ri = lyap_rhs(i, sigma_mu, corrs[i] if corrs else None)
                Rt.append(Ri)
                if b.idx.size:
                    rhs[b.idx] += np.einsum("aij,ij->a", b.gs, Ri - W @ Rd[i] @ W)
            dx = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            dS, dX = [], []
            for i, b in enumerate(blocks):
                W = scal[i][0]
                dSi = Rd[i].copy()
                if b.idx.size:
                    dSi = dSi + np.tensordot(dx[b.idx], b.gs, axes=1)
                dSi = 0.5 * (dSi + dSi.T)
                dXi = Rt[i] - W @ dSi @ W
                dS.append(dSi)
                dX.append(0.5 * (dXi + dXi.T))
            return dx, dS, dX

        def step_lengths(dS, dX):
            a_s = a_x = 1.0 / opts.step_fraction
            for i in range(len(blocks)):
                a_s = min(a_s, _max_step(S[i], dS[i]))
                a_x = min(a_x, _max_step(X[i], dX[i]))
            return min(1.0, opts.step_fraction * a_s), min(1.0, opts.step_fraction * a_x)

        dx_a, dS_a, dX_a = newton(0.0, None)
        if not np.all(np.isfinite(dx_a)):
            status = NUMERICAL_FAILURE
            break
        a_s, a_x = step_lengths(dS_a, dX_a)
        gap_aff = sum(
            float(np.tensordot(X[i] + a_x * dX_a[i], S[i] + a_s * dS_a[i]))
            for i in range(len(blocks))
        )
        sigma = min(1.0, max(0.0, gap_aff / gap) ** 3)
        corrs = []
        for i in range(len(blocks)):
            _, Whalf, Wihalf, _, _ = scal[i]
            dXh = Wihalf @ dX_a[i] @ Wihalf
            dSh = Whalf @ dS_a[i] @ Whalf
            P = dXh @ dSh
            corrs.append(0.5 * (P + P.T))
        dx, dS, dX = newton(sigma * mu, corrs)
        if not np.all(np.isfinite(dx)):
            status = NUMERICAL_FAILURE
            break
        a_s, a_x = step_lengths(dS, dX)
        if max(a_s, a_x) < 1e-10:
            status = NUMERICAL_FAILURE
            break
        x = x + a_s * dx
        for i in range(len(blocks)):
            S[i] = 0.5 * ((S[i] + a_s * dS[i]) + (S[i] + a_s * dS[i]).T)
            X[i] = 0.5 * ((X[i] + a_x * dX[i]) + (X[i] + a_x * dX[i]).T)

    err.__exit__(None, None, None)
    return finish(status, x, it, rels)


def margin_program(program: ConicProgram) -> ConicProgram:
    """Phase-I program: maximize t with every block shifted down by t I
    (capped at t <= 1), strictly feasible in (x, t) by construction."""
    nv = program.num_vars
    t = nv
    blocks = []
    for b in program.blocks:
        if b.sense == "zero":
            raise ValueError("eliminate equality blocks before the margin program")
        blocks.append(
            BlockLMI(
                name=b.name,
                sense=b.sense,
                g0=b.g0,
                terms=b.terms + ((t, -np.eye(b.dim)),),
            )
        )
    blocks.append(
        BlockLMI(name="margin_cap", sense="nonneg", g0=np.ones((1, 1)), terms=((t, -np.eye(1)),))
    )
    c = np.zeros(nv + 1)
    c[t] = 1.0
    return ConicProgram(c=c, blocks=blocks, layout=None)


def feasibility_margin(
    program: ConicProgram, opts: SolverOptions | None = None
) -> tuple[float, np.ndarray]:
    """Best eigenvalue shift achievable over the program's blocks.

    Returns (t_star, x) where t_star is the exact minimum block margin of
    the returned point (capped at 1), so a positive value is a verifiable
    strict-feasibility witness.  The caller classifies the program as
    strictly feasible iff t_star > opts.feas_eps.
    """
    opts = opts or SolverOptions()
    ineq, eq = _split_equalities(program)
    if eq:
        reduced = _eliminate_equalities(program, eq)
        if reduced is None:
            return -np.inf, np.zeros(program.num_vars)
        red, x0, F = reduced
        t, z = feasibility_margin(red, opts)
        return t, x0 + F @ z
    if not ineq:
        return 1.0, np.zeros(program.num_vars)
    shifted = margin_program(ConicProgram(c=program.c, blocks=ineq, layout=None))
    sol = solve(shifted, opts)
    x = sol.x[: program.num_vars]
    rep = residuals(ConicProgram(c=program.c, blocks=ineq, layout=None), x)
    t = min(1.0, rep.min_margin)
    if not np.isfinite(t):
        raise SolverFailure("phase-I margin solve produced a non-finite iterate")
    return t, x

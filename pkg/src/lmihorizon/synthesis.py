"""Policy synthesis: solve the convexified programs, recover controllers and
value functions, verify the recovered quantities against the original
nonlinear conditions, and build explicit open-loop feasibility candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import conic, lmi, model
from .model import Problem


class Infeasible(Exception):
    """Raised when the phase-I margin fails the strict-feasibility test."""

    def __init__(self, margin: float, step: int | None = None):
        self.margin = float(margin)
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"synthesis infeasible{where} (phase-I margin {margin:.3e})")


@dataclass
class RecoveredPolicy:
    P: list[np.ndarray]  # value matrices P_k = Pt_k^{-1}
    K: list[np.ndarray]  # gains K_k = Kt_k P_k
    nu: float
    M: list[np.ndarray] | None  # recovered multipliers, robust kinds only


@dataclass
class Certificate:
    """Solved decision variables of a synthesis program plus recovery."""

    kind: str
    p_tilde: list[np.ndarray]
    k_tilde: list[np.ndarray]
    nu_tilde: float
    Z: np.ndarray
    e_tilde: list[np.ndarray] | None
    recovered: RecoveredPolicy
    feasibility_margin: float
    solver_iterations: int = 0
    solver_residuals: tuple = (0.0, 0.0, 0.0)

    @property
    def bound(self) -> float:
        """Certified upper bound on the worst-case cost (nu)."""
        return self.recovered.nu

    def gain(self, k: int) -> np.ndarray:
        K = self.recovered.K
        return K[min(k, len(K) - 1)]

    def value_matrix(self, k: int) -> np.ndarray:
        P = self.recovered.P
        return P[min(k, len(P) - 1)]

    def value(self, k: int, x) -> float:
        v = np.concatenate([[1.0], np.asarray(x, dtype=float)])
        return float(v @ self.value_matrix(k) @ v)

    def control(self, k: int, x) -> np.ndarray:
        v = np.concatenate([[1.0], np.asarray(x, dtype=float)])
        return self.gain(k) @ v

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p_tilde": [P.tolist() for P in self.p_tilde],
            "k_tilde": [K.tolist() for K in self.k_tilde],
            "nu_tilde": self.nu_tilde,
            "Z": self.Z.tolist(),
            "e_tilde": None if self.e_tilde is None else [e.tolist() for e in self.e_tilde],
            "recovered": {
                "P": [P.tolist() for P in self.recovered.P],
                "K": [K.tolist() for K in self.recovered.K],
                "nu": self.recovered.nu,
                "M": None
                if self.recovered.M is None
                else [M.tolist() for M in self.recovered.M],
            },
            "feasibility_margin": self.feasibility_margin,
            "solver": {
                "iterations": self.solver_iterations,
                "residuals": list(self.solver_residuals),
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "Certificate":
        rec = d["recovered"]
        return Certificate(
            kind=d["kind"],
            p_tilde=[np.array(P) for P in d["p_tilde"]],
            k_tilde=[np.array(K) for K in d["k_tilde"]],
            nu_tilde=float(d["nu_tilde"]),
            Z=np.array(d["Z"]),
            e_tilde=None if d["e_tilde"] is None else [np.array(e) for e in d["e_tilde"]],
            recovered=RecoveredPolicy(
                P=[np.array(P) for P in rec["P"]],
                K=[np.array(K) for K in rec["K"]],
                nu=float(rec["nu"]),
                M=None if rec["M"] is None else [np.array(M) for M in rec["M"]],
            ),
            feasibility_margin=float(d["feasibility_margin"]),
            solver_iterations=int(d["solver"]["iterations"]),
            solver_residuals=tuple(d["solver"]["residuals"]),
        )


@dataclass
class CandidateParams:
    """Level sequence and peak bound behind a rank-one candidate."""

    c: np.ndarray
    eps: float
    nu_tilde: float


@dataclass
class VerificationReport:
    """Worst margins of the recovered quantities in the original
    (nonlinear) synthesis conditions, one entry per condition family."""

    cost: float
    initial: float
    terminal: float
    constraint: float
    tol: float
    details: list[tuple[str, float]] = field(default_factory=list)

    @property
    def worst(self) -> float:
        return min(self.cost, self.initial, self.terminal, self.constraint)

    @property
    def ok(self) -> bool:
        return self.worst >= -self.tol


def _extract_certificate(problem: Problem, layout, x, margin, sol=None) -> Certificate:
    N = problem.N
    p_tilde = [0.5 * (layout.get(x, ("P", k)) + layout.get(x, ("P", k)).T) for k in range(N + 1)]
    k_tilde = [layout.get(x, ("K", k)) for k in layout.gain_stages]
    nu_tilde = layout.get(x, "nu")
    Z = layout.get(x, "Z")
    e_tilde = None
    M = None
    if problem.kind != model.NOMINAL_FINITE:
        e_tilde = [layout.get(x, ("e", k)) for k in layout.multiplier_stages]
        M = [model.recover_multiplier(problem.cone, e) for e in e_tilde]
    P = [np.linalg.inv(Pt) for Pt in p_tilde]
    P = [0.5 * (Pk + Pk.T) for Pk in P]
    K = [k_tilde[j] @ P[j] for j in range(len(k_tilde))]
    rec = RecoveredPolicy(P=P, K=K, nu=1.0 / nu_tilde, M=M)
    return Certificate(
        kind=problem.kind,
        p_tilde=p_tilde,
        k_tilde=k_tilde,
        nu_tilde=nu_tilde,
        Z=Z,
        e_tilde=e_tilde,
        recovered=rec,
        feasibility_margin=float(margin),
        solver_iterations=0 if sol is None else sol.iterations,
        solver_residuals=(0.0, 0.0, 0.0) if sol is None else sol.residuals,
    )


def classify(
    problem: Problem,
    opts: conic.SolverOptions | None = None,
    tail_scale: str = "identity",
) -> tuple[bool, float]:
    """Phase-I only: is the synthesis program strictly feasible?"""
    opts = opts or conic.SolverOptions()
    program = lmi.assemble_program(problem, tail_scale=tail_scale)
    margin, _ = conic.feasibility_margin(program, opts)
    return margin > opts.feas_eps, margin


def synth(
    problem: Problem,
    opts: conic.SolverOptions | None = None,
    tail_scale: str = "identity",
) -> Certificate:
    """Solve the synthesis program of the problem kind and maximize nu_t.

    The phase-I margin decides feasibility first (conservatively: margins
    within feas_eps of zero count as infeasible); the returned bound
    nu = 1/nu_t upper-bounds the worst-case cost of the original problem.
    Raises Infeasible when the margin test fails.
    """
    opts = opts or conic.SolverOptions()
    program = lmi.assemble_program(problem, tail_scale=tail_scale)
    margin, _ = conic.feasibility_margin(program, opts)
    if margin <= opts.feas_eps:
        raise Infeasible(margin)
    sol = conic.solve(program, opts)
    if sol.status == conic.NUMERICAL_FAILURE:
        raise conic.SolverFailure("objective solve failed after feasible phase-I")
    if sol.status != conic.OPTIMAL and float(sol.min_eig_by_block.min()) < -opts.tol:
        raise conic.SolverFailure(
            f"objective solve returned {sol.status} without a feasible iterate"
        )
    return _extract_certificate(problem, program.layout, sol.x, margin, sol)


# ---------------------------------------------------------------------------
# Nonlinear condition checks
# ---------------------------------------------------------------------------


def _closed_maps(st: model.StageData, K: np.ndarray):
    """Closed-loop affine maps on (1, x): dynamics row block, performance
    rows, constraint rows and channel rows."""
    d = 1 + st.n
    T = np.vstack([np.eye(d), K])
    fa = np.hstack([st.f[:, None], st.A, st.B1]) @ T
    L = np.vstack([np.eye(1, d), fa])
    Y = np.hstack([st.g1[:, None], st.C1, st.D11]) @ T
    rows = [np.hstack([g2[:, None], C2, D21]) @ T for g2, C2, D21 in st.constraints]
    Zr = np.hstack([st.g3[:, None], st.C3, st.D31]) @ T
    return L, Y, rows, Zr


def _nominal_decrease_margin(st, P, Pnext, K) -> float:
    L, Y, _, _ = _closed_maps(st, K)
    F = -P + L.T @ Pnext @ L + Y.T @ Y
    return -float(np.linalg.eigvalsh(0.5 * (F + F.T))[-1])


def _robust_decrease_margin(st, P, Pnext, K, M) -> float:
    """Margin of the S-procedure decrease condition as a quadratic form on
    (1, x, w)."""
    d = 1 + st.n
    l, q = st.l, st.q
    L, Y, _, Zr = _closed_maps(st, K)
    sel = np.hstack([np.eye(d), np.zeros((d, l))])
    Lw = np.hstack([L, np.vstack([np.zeros((1, l)), st.B2])])
    Yw = np.hstack([Y, st.D12])
    Zw = np.hstack([Zr, st.D32])
    Wsel = np.hstack([np.zeros((l, d)), np.eye(l)])
    J = np.vstack([Zw, Wsel])
    F = -sel.T @ P @ sel + Lw.T @ Pnext @ Lw + Yw.T @ Yw + J.T @ M @ J
    return -float(np.linalg.eigvalsh(0.5 * (F + F.T))[-1])


def _constraint_margin(st, P, K, nu) -> float:
    _, _, rows, _ = _closed_maps(st, K)
    worst = np.inf
    for row in rows:
        F = P - nu * row.T @ row
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (F + F.T))[0]))
    return worst


def verify_certificate(problem: Problem, cert: Certificate, tol: float = 1e-6) -> VerificationReport:
    """Check the recovered (P, K, M, nu) in the original matrix inequalities.

    This exercises the congruence/dualization equivalences numerically: a
    certificate of the convexified program must satisfy the nonlinear
    stagewise decrease, initial-level, terminal/tail and peak-bound
    conditions with margins above -tol.
    """
    N = problem.N
    rec = cert.recovered
    if any(np.linalg.cond(Pt) > 1e14 for Pt in cert.p_tilde):
        raise ValueError("certificate has a numerically singular Pt; cannot recover P")
    nu = rec.nu
    details: list[tuple[str, float]] = []
    cost_margin = np.inf
    for k in range(N):
        st = problem.stages[k]
        if problem.kind == model.NOMINAL_FINITE:
            mg = _nominal_decrease_margin(st, rec.P[k], rec.P[k + 1], rec.K[k])
        else:
            mg = _robust_decrease_margin(st, rec.P[k], rec.P[k + 1], rec.K[k], rec.M[k])
        details.append((f"decrease[k={k}]", mg))
        cost_margin = min(cost_margin, mg)
    v = np.concatenate([[1.0], problem.x_bar])
    initial_margin = nu - float(v @ rec.P[0] @ v)
    details.append(("initial", initial_margin))
    if problem.kind == model.ROBUST_INFINITE:
        st = problem.stages[N]
        terminal_margin = _robust_decrease_margin(st, rec.P[N], rec.P[N], rec.K[N], rec.M[N])
        details.append(("tail", terminal_margin))
    else:
        F = rec.P[N] - problem.Pf
        terminal_margin = float(np.linalg.eigvalsh(0.5 * (F + F.T))[0])
        details.append(("terminal", terminal_margin))
    constraint_range = range(N + 1) if problem.kind == model.ROBUST_INFINITE else range(N)
    constraint_margin = np.inf
    for k in constraint_range:
        mg = _constraint_margin(problem.stages[k], rec.P[k], rec.K[min(k, len(rec.K) - 1)], nu)
        details.append((f"peak[k={k}]", mg))
        constraint_margin = min(constraint_margin, mg)
    return VerificationReport(
        cost=float(cost_margin) if N else np.inf,
        initial=float(initial_margin),
        terminal=float(terminal_margin),
        constraint=float(constraint_margin),
        tol=tol,
        details=details,
    )


# ---------------------------------------------------------------------------
# Open-loop feasibility candidate (rank-one construction)
# ---------------------------------------------------------------------------


def candidate_params(problem: Problem, trajectory, c_rule: str = "factor2") -> CandidateParams:
    """Level sequence c_k and peak bound for a strictly feasible trajectory.

    c_rule "factor2" doubles the max term (the construction used for the
    feasibility argument); "plain" uses the bare max (the variant behind the
    cost-tightness argument).
    """
    N = problem.N
    if trajectory.steps != N:
        raise ValueError(f"trajectory has {trajectory.steps} steps, expected horizon {N}")
    ys = np.array([float(y @ y) for y in trajectory.y])
    vmax = 0.0
    for k in range(N):
        for vi in trajectory.v[k]:
            vmax = max(vmax, float(vi @ vi))
    eps = 1.0 - vmax
    if eps <= 0.0:
        raise ValueError(f"trajectory is not strictly feasible (max v'v = {vmax:.6f})")
    vN = np.concatenate([[1.0], trajectory.x[N]])
    term = float(vN @ problem.Pf @ vN)
    total = float(ys.sum())
    base = max(total / eps, term)
    if c_rule == "factor2":
        base *= 2.0
    elif c_rule != "plain":
        raise ValueError(f"unknown c_rule {c_rule!r}")
    if base <= 0.0:
        base = 1.0  # zero cost and zero terminal weight: any positive level works
    suffix = np.concatenate([np.cumsum(ys[::-1])[::-1], [0.0]]) if N else np.zeros(1)
    c = suffix + base
    if c_rule == "factor2" and eps < 1.0:
        nu_inv = max(float(c[0]), float(c[N]) / (1.0 - eps))
    else:
        nu_inv = float(c[0])
    return CandidateParams(c=c, eps=eps, nu_tilde=1.0 / nu_inv)


def _hat_tilde_vector(problem: Problem, layout, nu_tilde: float) -> np.ndarray:
    """Interior companion point: inverse of a strictly dissipative
    zero-input value sweep, scaled until the peak-bound conditions hold."""
    N, d = problem.N, 1 + problem.n
    eta = 1e-6 * (1.0 + float(np.linalg.norm(problem.Pf)))
    P_hat = [None] * (N + 1)
    P_hat[N] = problem.Pf + eta * np.eye(d)
    Kzero = np.zeros((problem.m, d))
    for k in range(N - 1, -1, -1):
        st = problem.stages[k]
        L, Y, _, _ = _closed_maps(st, Kzero)
        P_hat[k] = L.T @ P_hat[k + 1] @ L + Y.T @ Y + eta * np.eye(d)
    nu = 1.0 / nu_tilde
    sigma = 1.0
    for k in range(N):
        _, _, rows, _ = _closed_maps(problem.stages[k], Kzero)
        Pinv = np.linalg.inv(P_hat[k])
        for row in rows:
            sigma = max(sigma, 2.0 * nu * float(row @ Pinv @ row.T))
    x = np.zeros(layout.dim)
    for k in range(N + 1):
        layout.set(x, ("P", k), np.linalg.inv(sigma * P_hat[k]))
    for k in layout.gain_stages:
        layout.set(x, ("K", k), Kzero)
    layout.set(x, "nu", nu_tilde)
    S0 = lmi.sqrt_sigma0(problem.x_bar)
    layout.set(x, "Z", 2.0 * nu_tilde**2 * S0 @ (sigma * P_hat[0]) @ S0)
    return x


def open_loop_candidate(
    problem: Problem,
    trajectory,
    nu_tilde_choice: str = "paper_margin",
    nu_tilde: float | None = None,
    c_rule: str = "factor2",
    ridge: float = 1e-9,
) -> Certificate:
    """Rank-one certificate built from a strictly feasible open-loop
    trajectory of the nominal problem.

    Pt_k = (1, x_k)(1, x_k)'/c_k + ridge I and Kt_k = u_k (1, x_k)'/c_k
    satisfy the convexified program non-strictly at ridge 0; the small ridge
    (blended toward an interior companion point when needed) makes the
    margins evaluable.  The result is checked by evaluating every program
    block at the candidate, not by re-solving.
    """
    if problem.kind != model.NOMINAL_FINITE:
        raise ValueError("open-loop candidates are defined for the nominal kind")
    model.validate_or_raise(problem)
    trajectory.check_dynamics(problem)
    params = candidate_params(problem, trajectory, c_rule=c_rule)
    if nu_tilde_choice == "paper_margin":
        nu_t = params.nu_tilde
    elif nu_tilde_choice == "custom":
        if nu_tilde is None:
            raise ValueError("custom nu_tilde_choice needs an explicit nu_tilde")
        nu_t = float(nu_tilde)
    else:
        raise ValueError(f"unknown nu_tilde_choice {nu_tilde_choice!r}")
    N, d = problem.N, 1 + problem.n
    program = lmi.assemble_program(problem, mu=0.0)
    layout = program.layout
    x = np.zeros(layout.dim)
    for k in range(N + 1):
        vk = np.concatenate([[1.0], trajectory.x[k]])
        layout.set(x, ("P", k), np.outer(vk, vk) / params.c[k] + ridge * np.eye(d))
        if k < N:
            layout.set(x, ("K", k), np.outer(trajectory.u[k], vk) / params.c[k])
    layout.set(x, "nu", nu_t)
    v0 = np.concatenate([[1.0], problem.x_bar])
    layout.set(x, "Z", params.c[0] * nu_t**2 / (v0 @ v0) * np.outer(v0, v0))
    margin = conic.residuals(program, x).min_margin
    if margin < 0.0:
        x_hat = _hat_tilde_vector(problem, layout, nu_t)
        best_x, best_margin = x, margin
        for alpha in (1e-8, 1e-6, 1e-4, 1e-2, 1e-1):
            x_try = (1.0 - alpha) * x + alpha * x_hat
            m_try = conic.residuals(program, x_try).min_margin
            if m_try > best_margin:
                best_x, best_margin = x_try, m_try
            if m_try >= -1e-12:
                break
        x, margin = best_x, best_margin
    return _extract_certificate(problem, layout, x, margin)


def tightened_cost(problem: Problem, t: float, opts: conic.SolverOptions | None = None) -> float:
    """Cost bound with the terminal weight shifted by t on the constant slot.

    Adding t e1 e1' to Pf adds the constant t to the objective, so the
    shifted bound minus t still bounds the original cost and tightens as t
    grows.  The problem is normalized by 1 + t before solving so the solver
    accuracy on nu_t translates into an absolute cost accuracy that does
    not degrade with t.
    """
    if problem.kind != model.NOMINAL_FINITE:
        raise ValueError("cost tightening applies to the nominal finite kind")
    if t < 0:
        raise ValueError("shift must be nonnegative")
    sigma = 1.0 + t
    d = 1 + problem.n
    e1 = np.zeros((d, d))
    e1[0, 0] = 1.0
    scale = 1.0 / np.sqrt(sigma)
    stages = tuple(
        replace(
            st,
            g1=st.g1 * scale,
            C1=st.C1 * scale,
            D11=st.D11 * scale,
            D12=st.D12 * scale,
        )
        for st in problem.stages
    )
    scaled = Problem(
        stages=stages,
        x_bar=problem.x_bar,
        cone=problem.cone,
        kind=problem.kind,
        Pf=(problem.Pf + t * e1) / sigma,
    )
    cert = synth(scaled, opts)
    return sigma / cert.nu_tilde - t

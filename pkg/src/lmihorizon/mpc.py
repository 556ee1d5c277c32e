"""Receding-horizon control on top of the infinite-horizon synthesis.

Each step re-solves the stationary-tail program at the measured state and
applies the first gain.  The shifted-candidate construction provides the
recursive-feasibility witness used by the regression checks.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import conic, lmi, model
from .model import Problem
from .simulate import DisturbanceSequence
from .synthesis import Certificate, Infeasible, RecoveredPolicy, _extract_certificate, synth


def _window(problem_stream, j: int) -> Problem:
    if isinstance(problem_stream, Problem):
        return problem_stream
    if callable(problem_stream):
        return problem_stream(j)
    return problem_stream[j]


def mpc_step(
    window: Problem,
    state,
    opts: conic.SolverOptions | None = None,
    tail_scale: str = "identity",
) -> tuple[np.ndarray, Certificate]:
    """Solve the stationary-tail program at the current state and return the
    first control u = K_0 (1, x) together with the full certificate."""
    if window.kind != model.ROBUST_INFINITE:
        raise ValueError("receding-horizon steps use the robust_infinite kind")
    prob = window.with_initial_state(state)
    cert = synth(prob, opts, tail_scale=tail_scale)
    u = cert.control(0, prob.x_bar)
    return u, cert


def shifted_candidate(cert: Certificate, problem: Problem, y_j) -> Certificate:
    """Time-shift of a certificate, the feasibility witness for the next step.

    ``problem`` must be the next-step window (its initial state is the
    successor state reached under the realized disturbance).  The value and
    gain sequences shift by one stage with the tail repeated, the peak bound
    drops by the realized output cost y_j'y_j, and everything is re-inverted
    into convexified coordinates so the program blocks can be evaluated at
    the candidate directly.
    """
    y_j = np.asarray(y_j, dtype=float)
    nu_new = cert.recovered.nu - float(y_j @ y_j)
    if nu_new <= 0.0:
        raise ValueError("cost budget exhausted: shifted peak bound is nonpositive")
    N = len(cert.p_tilde) - 1
    layout = lmi.DecisionLayout(problem)
    x = np.zeros(layout.dim)
    nu_t = 1.0 / nu_new
    for k in range(N + 1):
        layout.set(x, ("P", k), cert.p_tilde[min(k + 1, N)])
    for k in layout.gain_stages:
        layout.set(x, ("K", k), cert.k_tilde[min(k + 1, N)])
    layout.set(x, "nu", nu_t)
    if cert.e_tilde is not None:
        for k in layout.multiplier_stages:
            layout.set(x, ("e", k), cert.e_tilde[min(k + 1, N)])
    P0 = np.linalg.inv(cert.p_tilde[min(1, N)])
    S0 = lmi.sqrt_sigma0(problem.x_bar)
    layout.set(x, "Z", nu_t**2 * S0 @ P0 @ S0)
    program = lmi.assemble_program(problem, mu=0.0)
    margin = conic.residuals(program, x).min_margin
    return _extract_certificate(problem, layout, x, margin)


@dataclass
class ClosedLoopLog:
    x: np.ndarray  # (J+1, n)
    u: np.ndarray  # (J, m)
    y: np.ndarray  # (J, p)
    nu: np.ndarray  # (J,)
    max_vv: np.ndarray  # (J,)
    feasible: np.ndarray  # (J,) bools
    solve_ms: np.ndarray  # (J,)
    certificates: list[Certificate] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    def total_cost(self) -> float:
        return float(np.sum(self.y * self.y))


def run_closed_loop(
    problem_stream,
    x0,
    disturbance: DisturbanceSequence,
    steps: int,
    opts: conic.SolverOptions | None = None,
    tail_scale: str = "identity",
    keep_certificates: bool = False,
) -> ClosedLoopLog:
    """Iterate the receding-horizon controller against the true uncertain
    dynamics for the given disturbance realization.

    Raises Infeasible (with the failing step index) if any step's program
    fails the strict-feasibility test; under admissible disturbances this
    does not happen once step 0 is feasible.
    """
    first = _window(problem_stream, 0)
    n, m, p = first.n, first.m, first.p
    disturbance.check_bounds(first.cone)
    if disturbance.steps < steps:
        raise ValueError("disturbance sequence shorter than the run")
    x = np.zeros((steps + 1, n))
    x[0] = np.asarray(x0, dtype=float)
    u = np.zeros((steps, m))
    y = np.zeros((steps, p))
    nu = np.zeros(steps)
    max_vv = np.zeros(steps)
    feasible = np.zeros(steps, dtype=bool)
    solve_ms = np.zeros(steps)
    certs: list[Certificate] = []
    for j in range(steps):
        window = _window(problem_stream, j)
        t0 = time.perf_counter()
        try:
            uj, cert = mpc_step(window, x[j], opts, tail_scale=tail_scale)
        except Infeasible as exc:
            raise Infeasible(exc.margin, step=j) from exc
        solve_ms[j] = 1e3 * (time.perf_counter() - t0)
        feasible[j] = True
        nu[j] = cert.recovered.nu
        if keep_certificates:
            certs.append(cert)
        st = window.stage(0)
        u[j] = uj
        zj = st.g3 + st.C3 @ x[j] + st.D31 @ u[j]
        wj = window.cone.expand(disturbance.deltas[j]) * zj
        x[j + 1] = st.f + st.A @ x[j] + st.B1 @ u[j] + st.B2 @ wj
        y[j] = st.g1 + st.C1 @ x[j] + st.D11 @ u[j] + st.D12 @ wj
        vv = 0.0
        for g2, C2, D21 in st.constraints:
            vi = g2 + C2 @ x[j] + D21 @ u[j]
            vv = max(vv, float(vi @ vi))
        max_vv[j] = vv
    return ClosedLoopLog(
        x=x, u=u, y=y, nu=nu, max_vv=max_vv, feasible=feasible, solve_ms=solve_ms,
        certificates=certs,
    )


def log_to_csv(log: ClosedLoopLog, path) -> None:
    """One row per step: j, states, inputs, nu_j, y'y, max v'v, feasible,
    solve_ms."""
    n, m = log.x.shape[1], log.u.shape[1]
    header = (
        ["j"]
        + [f"x{i+1}" for i in range(n)]
        + [f"u{i+1}" for i in range(m)]
        + ["nu", "yy", "max_vv", "feasible", "solve_ms"]
    )
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(header)
        for j in range(log.steps):
            writer.writerow(
                [j]
                + [f"{v:.12g}" for v in log.x[j]]
                + [f"{v:.12g}" for v in log.u[j]]
                + [
                    f"{log.nu[j]:.12g}",
                    f"{float(log.y[j] @ log.y[j]):.12g}",
                    f"{log.max_vv[j]:.12g}",
                    str(bool(log.feasible[j])).lower(),
                    f"{log.solve_ms[j]:.3f}",
                ]
            )

"""Closed-loop rollout of affine policies through the channel loop, with
cost, constraint and value-decrease monitoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import model
from .model import MultiplierCone, Problem, Trajectory

VERTICES = "vertices"
UNIFORM = "uniform"
CUSTOM = "custom"


@dataclass(frozen=True)
class DisturbanceSequence:
    """Per-step channel gains delta_k with |delta_{k,i}| <= gamma_i."""

    deltas: np.ndarray  # (steps, num_channels)
    mode: str = CUSTOM

    def __post_init__(self):
        object.__setattr__(self, "deltas", np.atleast_2d(np.asarray(self.deltas, dtype=float)))

    @property
    def steps(self) -> int:
        return self.deltas.shape[0]

    def check_bounds(self, cone: MultiplierCone) -> None:
        g = cone.bounds
        if self.deltas.shape[1] != cone.num_channels:
            raise ValueError("disturbance channel count does not match the cone")
        if np.any(np.abs(self.deltas) > g[None, :] + 1e-15):
            raise ValueError("disturbance exceeds the channel bounds")


def sample_disturbances(
    cone: MultiplierCone, steps: int, mode: str = UNIFORM, seed: int | None = None
) -> DisturbanceSequence:
    """Vertex mode cycles the sign patterns (+...+, -+...+, +-...+, ...) of
    the extreme gains; uniform mode draws i.i.d. uniformly in the bounds.
    Both are deterministic for a fixed seed."""
    nc = cone.num_channels
    g = cone.bounds
    if mode == VERTICES:
        deltas = np.empty((steps, nc))
        for t in range(steps):
            signs = np.array([1.0 if (t >> i) & 1 == 0 else -1.0 for i in range(nc)])
            deltas[t] = signs * g
        return DisturbanceSequence(deltas=deltas, mode=VERTICES)
    if mode == UNIFORM:
        rng = np.random.default_rng(seed)
        deltas = rng.uniform(-g, g, size=(steps, nc)) if nc else np.zeros((steps, 0))
        return DisturbanceSequence(deltas=deltas, mode=UNIFORM)
    raise ValueError(f"unknown disturbance mode {mode!r}")


def zero_disturbance(cone: MultiplierCone, steps: int) -> DisturbanceSequence:
    return DisturbanceSequence(deltas=np.zeros((steps, cone.num_channels)), mode=CUSTOM)


def rollout(
    problem: Problem,
    policy,
    disturbance: DisturbanceSequence | None,
    steps: int,
    x0=None,
) -> Trajectory:
    """Roll the closed loop x+ = f + A x + B1 u + B2 w for u = K_k (1, x).

    The channel output z is computed first and w = diag(delta) z closes the
    loop, which requires D32 = 0 (no algebraic loop).  Policies shorter than
    the rollout reuse their last gain, matching the stationary tail of the
    infinite-horizon kind; finite kinds must supply enough gains.
    """
    policy = list(policy)
    if problem.kind != model.ROBUST_INFINITE and len(policy) < steps:
        raise ValueError(f"policy supplies {len(policy)} gains for {steps} steps")
    if disturbance is None:
        disturbance = zero_disturbance(problem.cone, steps)
    disturbance.check_bounds(problem.cone)
    if disturbance.steps < steps:
        raise ValueError("disturbance sequence shorter than the rollout")
    n, mdim, l, p, q = problem.n, problem.m, problem.l, problem.p, problem.q
    x = np.zeros((steps + 1, n))
    x[0] = problem.x_bar if x0 is None else np.asarray(x0, dtype=float)
    u = np.zeros((steps, mdim))
    w = np.zeros((steps, l))
    y = np.zeros((steps, p))
    z = np.zeros((steps, q))
    v: list = []
    cost = 0.0
    for k in range(steps):
        st = problem.stage(k)
        if np.any(st.D32 != 0.0):
            raise ValueError("rollout requires D32 = 0 at every stage")
        K = policy[min(k, len(policy) - 1)]
        aug = np.concatenate([[1.0], x[k]])
        u[k] = K @ aug
        z[k] = st.g3 + st.C3 @ x[k] + st.D31 @ u[k]
        w[k] = problem.cone.expand(disturbance.deltas[k]) * z[k]
        x[k + 1] = st.f + st.A @ x[k] + st.B1 @ u[k] + st.B2 @ w[k]
        y[k] = st.g1 + st.C1 @ x[k] + st.D11 @ u[k] + st.D12 @ w[k]
        v.append([g2 + C2 @ x[k] + D21 @ u[k] for g2, C2, D21 in st.constraints])
        cost += float(y[k] @ y[k])
    return Trajectory(x=x, u=u, w=w, y=y, v=v, z=z, cost=cost)


def open_loop_trajectory(problem: Problem, inputs, x0=None) -> Trajectory:
    """Nominal rollout of an explicit input sequence (no feedback, no
    disturbance); used to seed the rank-one candidates."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] and inputs.shape[1] != problem.m:
        inputs = inputs.reshape(-1, problem.m)
    steps = inputs.shape[0]
    n, mdim, l, p, q = problem.n, problem.m, problem.l, problem.p, problem.q
    x = np.zeros((steps + 1, n))
    x[0] = problem.x_bar if x0 is None else np.asarray(x0, dtype=float)
    u = np.zeros((steps, mdim))
    w = np.zeros((steps, l))
    y = np.zeros((steps, p))
    z = np.zeros((steps, q))
    v: list = []
    cost = 0.0
    for k in range(steps):
        st = problem.stage(k)
        u[k] = inputs[k]
        z[k] = st.g3 + st.C3 @ x[k] + st.D31 @ u[k]
        x[k + 1] = st.f + st.A @ x[k] + st.B1 @ u[k]
        y[k] = st.g1 + st.C1 @ x[k] + st.D11 @ u[k]
        v.append([g2 + C2 @ x[k] + D21 @ u[k] for g2, C2, D21 in st.constraints])
        cost += float(y[k] @ y[k])
    return Trajectory(x=x, u=u, w=w, y=y, v=v, z=z, cost=cost)


def value_decrease_check(cert, trajectory: Trajectory) -> float:
    """Worst margin of V_k(x_k) - y_k'y_k - V_{k+1}(x_{k+1}) along the
    trajectory; nonnegative (up to solver accuracy) for valid certificates."""
    T = trajectory.steps
    if trajectory.x.shape[0] != T + 1:
        raise ValueError("trajectory state/input lengths are inconsistent")
    worst = np.inf
    for k in range(T):
        vk = cert.value(k, trajectory.x[k])
        vk1 = cert.value(k + 1, trajectory.x[k + 1])
        worst = min(worst, vk - float(trajectory.y[k] @ trajectory.y[k]) - vk1)
    return float(worst)


def trajectory_to_csv(trajectory: Trajectory, path, cert=None) -> None:
    """One row per step: k, states, inputs, disturbances, outputs, the
    largest constraint quadratic and (when a certificate is given) V_k."""
    n = trajectory.x.shape[1]
    m = trajectory.u.shape[1]
    l = trajectory.w.shape[1]
    p = trajectory.y.shape[1]
    header = (
        ["k"]
        + [f"x{i+1}" for i in range(n)]
        + [f"u{i+1}" for i in range(m)]
        + [f"w{i+1}" for i in range(l)]
        + [f"y{i+1}" for i in range(p)]
        + ["max_vv"]
        + (["V"] if cert is not None else [])
    )
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(header)
        for k in range(trajectory.steps):
            vv = max((float(vi @ vi) for vi in trajectory.v[k]), default=0.0)
            row = (
                [k]
                + list(trajectory.x[k])
                + list(trajectory.u[k])
                + list(trajectory.w[k])
                + list(trajectory.y[k])
                + [vv]
            )
            if cert is not None:
                row.append(cert.value(k, trajectory.x[k]))
            writer.writerow(row)

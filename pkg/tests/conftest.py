"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from lmihorizon import model, simulate


def random_nominal_problem(rng, horizon=None, strict_level=0.5):
    """Random nominal finite-horizon instance together with an open-loop
    trajectory whose constraint outputs peak at strict_level < 1.

    The constraint rows are scaled against the sampled trajectory, so the
    trajectory is strictly feasible by construction.
    """
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    N = int(horizon if horizon is not None else rng.integers(1, 4))
    s = int(rng.integers(1, 4))

    def rand(r, c, scale=1.0):
        return scale * rng.standard_normal((r, c))

    A = rand(n, n)
    rho = max(abs(np.linalg.eigvals(A)))
    if rho > 1.2:
        A = A * (1.2 / rho)
    stages = []
    C1 = np.vstack([np.eye(n), np.zeros((m, n))])
    D11 = np.vstack([np.zeros((n, m)), np.eye(m)])
    cons = [(np.zeros(1), rand(1, n, 0.5), rand(1, m, 0.5)) for _ in range(s)]
    for _ in range(N + 1):
        stages.append(
            model.StageData(
                f=0.1 * rng.standard_normal(n),
                A=A,
                B1=rand(n, m),
                B2=np.zeros((n, 0)),
                g1=np.zeros(n + m),
                C1=C1,
                D11=D11,
                D12=np.zeros((n + m, 0)),
                constraints=tuple(cons),
                g3=np.zeros(0),
                C3=np.zeros((0, n)),
                D31=np.zeros((0, m)),
                D32=np.zeros((0, 0)),
            )
        )
    W = rng.standard_normal((1 + n, 1 + n))
    Pf = W @ W.T / (1 + n) + 0.1 * np.eye(1 + n)
    x_bar = rng.standard_normal(n)
    problem = model.Problem(
        stages=tuple(stages),
        x_bar=x_bar,
        cone=model.MultiplierCone(()),
        kind=model.NOMINAL_FINITE,
        Pf=Pf,
    )
    inputs = rng.standard_normal((N, m))
    traj = simulate.open_loop_trajectory(problem, inputs)
    peak = max(
        (float(vi @ vi) for vk in traj.v for vi in vk),
        default=0.0,
    )
    if peak > 0:
        scale = np.sqrt(strict_level / peak)
    else:
        scale = 1.0
    scaled_cons = tuple((g2 * scale, C2 * scale, D21 * scale) for g2, C2, D21 in cons)
    stages = tuple(
        model.StageData(
            f=st.f, A=st.A, B1=st.B1, B2=st.B2, g1=st.g1, C1=st.C1, D11=st.D11,
            D12=st.D12, constraints=scaled_cons, g3=st.g3, C3=st.C3, D31=st.D31,
            D32=st.D32,
        )
        for st in stages
    )
    problem = model.Problem(
        stages=stages, x_bar=x_bar, cone=model.MultiplierCone(()),
        kind=model.NOMINAL_FINITE, Pf=Pf,
    )
    traj = simulate.open_loop_trajectory(problem, inputs)
    return problem, traj


def box_problem_outside_start(rng):
    """2-D box-constrained nominal instance whose initial state violates the
    state box, so no input sequence can be feasible."""
    N = int(rng.integers(1, 4))
    bx = rng.uniform(2.0, 6.0, size=2)
    bu = rng.uniform(1.0, 4.0)
    A = np.array([[1.0, 0.2], [0.1, 1.0]]) + 0.1 * rng.standard_normal((2, 2))
    B1 = rng.standard_normal((2, 1))
    stage = model.StageData(
        f=np.zeros(2),
        A=A,
        B1=B1,
        B2=np.zeros((2, 0)),
        g1=np.zeros(3),
        C1=np.vstack([np.eye(2), np.zeros((1, 2))]),
        D11=np.array([[0.0], [0.0], [1.0]]),
        D12=np.zeros((3, 0)),
        constraints=(
            (np.zeros(1), np.array([[1.0 / bx[0], 0.0]]), np.zeros((1, 1))),
            (np.zeros(1), np.array([[0.0, 1.0 / bx[1]]]), np.zeros((1, 1))),
            (np.zeros(1), np.zeros((1, 2)), np.array([[1.0 / bu]])),
        ),
        g3=np.zeros(0),
        C3=np.zeros((0, 2)),
        D31=np.zeros((0, 1)),
        D32=np.zeros((0, 0)),
    )
    axis = int(rng.integers(0, 2))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    x_bar = rng.uniform(-1.0, 1.0, size=2) * bx * 0.5
    x_bar[axis] = sign * bx[axis] * rng.uniform(1.2, 2.0)
    return model.Problem(
        stages=(stage,) * (N + 1),
        x_bar=x_bar,
        cone=model.MultiplierCone(()),
        kind=model.NOMINAL_FINITE,
        Pf=np.eye(3),
    )


@pytest.fixture(scope="session")
def example_problem():
    return model.build_example(0.05, 0.1, horizon=0, x_bar=(1.0, 1.0))

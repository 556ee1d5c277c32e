"""Uncertain constrained linear control problems in channel (LFT) form.

A problem is a horizon of stage data for the affine system

    x[k+1] = f + A x[k] + B1 u[k] + B2 w[k]

with performance output y, normalized constraint outputs v_i (v_i' v_i <= 1)
and an uncertainty output z that closes the loop w = diag(delta) z through
repeated-scalar channels |delta_i| <= gamma_i.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

NOMINAL_FINITE = "nominal_finite"
ROBUST_FINITE = "robust_finite"
ROBUST_INFINITE = "robust_infinite"
KINDS = (NOMINAL_FINITE, ROBUST_FINITE, ROBUST_INFINITE)


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _mat(a, rows: int, cols: int) -> np.ndarray:
    out = np.array(a, dtype=float)
    if out.size == 0:
        out = out.reshape(rows, cols)
    if out.ndim != 2:
        raise ValueError(f"expected a matrix, got array of ndim {out.ndim}")
    return _freeze(out)


def _vec(a, length: int | None = None) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(-1)
    if length is not None and out.size == 0:
        out = np.zeros(length)
    return _freeze(out)


@dataclass(frozen=True)
class MultiplierCone:
    """Repeated-scalar uncertainty channels (size, bound gamma_i).

    Parametrizes two cones of quadratic forms on (z, w): the scaling family
    M(d) with blocks M11 = diag(gamma_i^2 d_i I), M22 = -diag(d_i I), and the
    family of their inverses Mt(e) with Mt11 = diag(e_i I),
    Mt22 = -diag(gamma_i^2 e_i I).  Both are linear in the positive parameter
    vector, so cone membership reduces to sign constraints.
    """

    channels: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "channels",
            tuple((int(s), float(g)) for s, g in self.channels),
        )

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def dim(self) -> int:
        """Total dimension of the z (and w) signal."""
        return sum(s for s, _ in self.channels)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([g for _, g in self.channels])

    def expand(self, per_channel) -> np.ndarray:
        """Repeat one scalar per channel across the channel block sizes."""
        per_channel = np.asarray(per_channel, dtype=float).reshape(-1)
        if per_channel.size != self.num_channels:
            raise ValueError(
                f"expected {self.num_channels} per-channel values, got {per_channel.size}"
            )
        return np.repeat(per_channel, [s for s, _ in self.channels])

    def channel_slices(self) -> list[slice]:
        out, start = [], 0
        for s, _ in self.channels:
            out.append(slice(start, start + s))
            start += s
        return out


@dataclass(frozen=True)
class StageData:
    """All affine system, cost, constraint and channel matrices at one step."""

    f: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    g1: np.ndarray
    C1: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    constraints: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]
    g3: np.ndarray
    C3: np.ndarray
    D31: np.ndarray
    D32: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, 0, 0)
        n = A.shape[0]
        B1 = np.atleast_2d(np.array(self.B1, dtype=float))
        m = B1.shape[1]
        B2 = _mat(self.B2, n, 0)
        l = B2.shape[1]
        C1 = _mat(self.C1, 0, n)
        p = C1.shape[0]
        C3 = _mat(self.C3, 0, n)
        q = C3.shape[0]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B1", _freeze(B1))
        object.__setattr__(self, "B2", B2)
        object.__setattr__(self, "f", _vec(self.f, n))
        object.__setattr__(self, "g1", _vec(self.g1, p))
        object.__setattr__(self, "C1", C1)
        object.__setattr__(self, "D11", _mat(self.D11, p, m))
        object.__setattr__(self, "D12", _mat(self.D12, p, l))
        object.__setattr__(self, "g3", _vec(self.g3, q))
        object.__setattr__(self, "C3", C3)
        object.__setattr__(self, "D31", _mat(self.D31, q, m))
        object.__setattr__(self, "D32", _mat(self.D32, q, l))
        cons = []
        for g2, C2, D21 in self.constraints:
            C2 = np.atleast_2d(np.array(C2, dtype=float))
            r = C2.shape[0]
            cons.append((_vec(g2, r), _freeze(C2), _mat(D21, r, m)))
        object.__setattr__(self, "constraints", tuple(cons))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B1.shape[1]

    @property
    def l(self) -> int:
        return self.B2.shape[1]

    @property
    def p(self) -> int:
        return self.C1.shape[0]

    @property
    def q(self) -> int:
        return self.C3.shape[0]

    @property
    def s(self) -> int:
        return len(self.constraints)

    def closed_loop(self, delta, cone: MultiplierCone):
        """Affine dynamics (f_d, A_d, B_d) with the channel loop w = diag(delta) z
        closed for fixed per-channel values delta.  Requires D32 = 0."""
        if np.any(self.D32 != 0.0):
            raise ValueError("closed_loop requires D32 = 0")
        Delta = np.diag(cone.expand(delta)) if self.q else np.zeros((0, 0))
        B2D = self.B2 @ Delta
        return (
            self.f + B2D @ self.g3,
            self.A + B2D @ self.C3,
            self.B1 + B2D @ self.D31,
        )


@dataclass(frozen=True)
class Problem:
    """A horizon of stage data plus initial state, terminal cost and cone.

    ``stages`` has length N+1; the last stage doubles as the stationary tail
    when ``kind`` is "robust_infinite".  ``Pf`` is the (1+n)x(1+n) terminal
    cost matrix on (1, x) and is only used by the finite-horizon kinds.
    """

    stages: tuple[StageData, ...]
    x_bar: np.ndarray
    cone: MultiplierCone
    kind: str
    Pf: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "x_bar", _vec(self.x_bar))
        if self.Pf is not None:
            object.__setattr__(self, "Pf", _freeze(np.atleast_2d(self.Pf)))

    @property
    def N(self) -> int:
        return len(self.stages) - 1

    @property
    def n(self) -> int:
        return self.stages[0].n

    @property
    def m(self) -> int:
        return self.stages[0].m

    @property
    def l(self) -> int:
        return self.stages[0].l

    @property
    def p(self) -> int:
        return self.stages[0].p

    @property
    def q(self) -> int:
        return self.stages[0].q

    @property
    def s(self) -> int:
        return self.stages[0].s

    def stage(self, k: int) -> StageData:
        """Stage data at time k, reusing the tail stage beyond the horizon."""
        if self.kind == ROBUST_INFINITE:
            return self.stages[min(k, self.N)]
        return self.stages[k]

    def with_initial_state(self, x_bar) -> "Problem":
        return replace(self, x_bar=_vec(x_bar))


@dataclass
class Trajectory:
    """A rollout record: states, inputs, disturbances and outputs."""

    x: np.ndarray  # (T+1, n)
    u: np.ndarray  # (T, m)
    w: np.ndarray  # (T, l)
    y: np.ndarray  # (T, p)
    v: list  # per step: list of per-constraint output vectors
    z: np.ndarray  # (T, q)
    cost: float

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    def max_constraint(self) -> float:
        worst = 0.0
        for vk in self.v:
            for vi in vk:
                worst = max(worst, float(vi @ vi))
        return worst

    def check_dynamics(self, problem: Problem, tol: float = 1e-9) -> float:
        """Largest violation of the stagewise state recursion."""
        worst = 0.0
        for k in range(self.steps):
            st = problem.stage(k)
            pred = st.f + st.A @ self.x[k] + st.B1 @ self.u[k] + st.B2 @ self.w[k]
            worst = max(worst, float(np.max(np.abs(pred - self.x[k + 1]))))
        if worst > tol:
            raise ValueError(f"trajectory violates the dynamics by {worst:.3e}")
        return worst


def multiplier_from_params(cone: MultiplierCone, d) -> np.ndarray:
    """Quadratic form on (z, w) that is nonnegative on w = diag(delta) z.

    M(d) = blkdiag(diag(gamma_i^2 d_i I), -diag(d_i I)) for d > 0.
    """
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size != cone.num_channels:
        raise ValueError(f"expected {cone.num_channels} scaling entries, got {d.size}")
    if np.any(d <= 0.0):
        raise ValueError("multiplier scalings must be strictly positive")
    gsq = cone.bounds**2
    top = cone.expand(gsq * d)
    bot = cone.expand(d)
    return np.diag(np.concatenate([top, -bot]))


def inverse_multiplier_from_params(cone: MultiplierCone, e_tilde) -> np.ndarray:
    """Element of the inverse-scaling family, linear in e_tilde > 0.

    Mt(e) = blkdiag(diag(e_i I), -diag(gamma_i^2 e_i I)); choosing
    e_i = 1 / (gamma_i^2 d_i) gives Mt(e) = M(d)^{-1}.
    """
    e = np.asarray(e_tilde, dtype=float).reshape(-1)
    if e.size != cone.num_channels:
        raise ValueError(f"expected {cone.num_channels} entries, got {e.size}")
    if np.any(e <= 0.0):
        raise ValueError("inverse-multiplier parameters must be strictly positive")
    g = cone.bounds
    if np.any(g == 0.0):
        raise ValueError(
            "zero-bound channels are not invertible; drop them from the channel set"
        )
    top = cone.expand(e)
    bot = cone.expand(g**2 * e)
    return np.diag(np.concatenate([top, -bot]))


def recover_multiplier(cone: MultiplierCone, e_tilde) -> np.ndarray:
    """Channel-wise closed-form inverse of inverse_multiplier_from_params."""
    e = np.asarray(e_tilde, dtype=float).reshape(-1)
    g = cone.bounds
    return multiplier_from_params(cone, 1.0 / (g**2 * e))


def build_example(
    gamma: float,
    eps2_bound: float,
    horizon: int = 0,
    x_bar=(0.0, 0.0),
    kind: str = ROBUST_INFINITE,
    pf=None,
) -> Problem:
    """Double-integrator-like benchmark with two scalar uncertainty channels.

    Nominal dynamics A = [[1, 0.15], [0.1, 1]], B1 = [0.1; 1.1]; the (1,1)
    entry of A is perturbed by eps1 in [-gamma, gamma] and the (2,1) entry of
    B1 by eps2 in [-eps2_bound, eps2_bound], pulled out through channels
    z = (x1, u), w = diag(eps) z.  Constraints x1^2 <= 64, x2^2 <= 64,
    u^2 <= 16 are stored as unit-bound outputs; the performance output is
    y = (x1, x2, u).  All stages are identical and the last one is the tail.

    Channels with zero bound are dropped from the channel set entirely so
    the inverse-scaling family stays well defined.
    """
    if gamma < 0 or eps2_bound < 0:
        raise ValueError("uncertainty bounds must be nonnegative")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    A = np.array([[1.0, 0.15], [0.1, 1.0]])
    B1 = np.array([[0.1], [1.1]])
    channels = []
    cols = []
    c3_rows = []
    d31_rows = []
    if gamma > 0.0:
        channels.append((1, gamma))
        cols.append([1.0, 0.0])
        c3_rows.append([1.0, 0.0])
        d31_rows.append([0.0])
    if eps2_bound > 0.0:
        channels.append((1, eps2_bound))
        cols.append([0.0, 1.0])
        c3_rows.append([0.0, 0.0])
        d31_rows.append([1.0])
    l = len(channels)
    B2 = np.array(cols).T if l else np.zeros((2, 0))
    C3 = np.array(c3_rows) if l else np.zeros((0, 2))
    D31 = np.array(d31_rows) if l else np.zeros((0, 1))
    stage = StageData(
        f=np.zeros(2),
        A=A,
        B1=B1,
        B2=B2,
        g1=np.zeros(3),
        C1=np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
        D11=np.array([[0.0], [0.0], [1.0]]),
        D12=np.zeros((3, l)),
        constraints=(
            (np.zeros(1), np.array([[1.0 / 8.0, 0.0]]), np.zeros((1, 1))),
            (np.zeros(1), np.array([[0.0, 1.0 / 8.0]]), np.zeros((1, 1))),
            (np.zeros(1), np.array([[0.0, 0.0]]), np.array([[0.25]])),
        ),
        g3=np.zeros(l),
        C3=C3,
        D31=D31,
        D32=np.zeros((l, l)),
    )
    if kind in (NOMINAL_FINITE, ROBUST_FINITE):
        if pf is None:
            raise ValueError("finite-horizon kinds need a terminal cost matrix pf")
        Pf = np.atleast_2d(np.array(pf, dtype=float))
    else:
        Pf = None
    return Problem(
        stages=(stage,) * (horizon + 1),
        x_bar=np.asarray(x_bar, dtype=float),
        cone=MultiplierCone(tuple(channels)),
        kind=kind,
        Pf=Pf,
    )


def validate(problem: Problem) -> list[str]:
    """All structural violations found, as human-readable strings."""
    errs: list[str] = []
    if problem.kind not in KINDS:
        errs.append(f"unknown kind {problem.kind!r}")
    if not problem.stages:
        return errs + ["problem has no stages"]
    ref = problem.stages[0]
    n, m, l, p, q, s = ref.n, ref.m, ref.l, ref.p, ref.q, ref.s
    rows_per_constraint = [C2.shape[0] for _, C2, _ in ref.constraints]
    for k, st in enumerate(problem.stages):
        def bad(fieldname, got, want):
            errs.append(f"stage {k}: {fieldname} has shape {got}, expected {want}")

        checks = [
            ("f", st.f.shape, (n,)),
            ("A", st.A.shape, (n, n)),
            ("B1", st.B1.shape, (n, m)),
            ("B2", st.B2.shape, (n, l)),
            ("g1", st.g1.shape, (p,)),
            ("C1", st.C1.shape, (p, n)),
            ("D11", st.D11.shape, (p, m)),
            ("D12", st.D12.shape, (p, l)),
            ("g3", st.g3.shape, (q,)),
            ("C3", st.C3.shape, (q, n)),
            ("D31", st.D31.shape, (q, m)),
            ("D32", st.D32.shape, (q, l)),
        ]
        for name, got, want in checks:
            if got != want:
                bad(name, got, want)
        if st.s != s:
            errs.append(f"stage {k}: has {st.s} constraint outputs, expected {s}")
        else:
            for i, (g2, C2, D21) in enumerate(st.constraints):
                r = rows_per_constraint[i]
                if C2.shape != (r, n):
                    bad(f"C2[{i}]", C2.shape, (r, n))
                if D21.shape != (r, m):
                    bad(f"D21[{i}]", D21.shape, (r, m))
                if g2.shape != (r,):
                    bad(f"g2[{i}]", g2.shape, (r,))
        # Well-posedness of the channel loop: D32 must be strictly lower
        # block-triangular in the channel ordering (zero in the benchmark).
        sl = problem.cone.channel_slices()
        if st.D32.shape == (q, l) and len(sl) == problem.cone.num_channels:
            for bi, rs in enumerate(sl):
                for bj, cs in enumerate(sl):
                    if bj >= bi and np.any(st.D32[rs, cs] != 0.0):
                        errs.append(
                            f"stage {k}: D32 block ({bi},{bj}) nonzero; channel loop not well posed"
                        )
                        break
    if problem.cone.dim != q or problem.cone.dim != l:
        errs.append(
            f"cone dimension {problem.cone.dim} does not match channel sizes q={q}, l={l}"
        )
    for i, (sz, g) in enumerate(problem.cone.channels):
        if sz < 1:
            errs.append(f"cone channel {i}: nonpositive size {sz}")
        if g < 0:
            errs.append(f"cone channel {i}: negative bound {g}")
    if problem.x_bar.shape != (n,):
        errs.append(f"x_bar has shape {problem.x_bar.shape}, expected ({n},)")
    if problem.kind in (NOMINAL_FINITE, ROBUST_FINITE):
        if problem.Pf is None:
            errs.append("finite-horizon kinds require a terminal cost matrix Pf")
        else:
            Pf = problem.Pf
            if Pf.shape != (1 + n, 1 + n):
                errs.append(f"Pf has shape {Pf.shape}, expected ({1 + n}, {1 + n})")
            elif np.max(np.abs(Pf - Pf.T)) > 1e-10:
                errs.append("Pf is not symmetric")
            elif np.linalg.eigvalsh(0.5 * (Pf + Pf.T))[0] < -1e-10 * max(
                1.0, float(np.linalg.norm(Pf))
            ):
                errs.append("Pf is not positive semidefinite")
    return errs


def validate_or_raise(problem: Problem) -> None:
    errs = validate(problem)
    if errs:
        raise ValueError("invalid problem:\n  " + "\n  ".join(errs))


# ---------------------------------------------------------------------------
# JSON problem format
# ---------------------------------------------------------------------------
#
# {"kind": ..., "x_bar": [...], "Pf": [[...]] | null,
#  "cone": [{"size": int, "bound": float}, ...],
#  "stages": [{"f": [...], "A": [[...]], "B1": ..., "B2": ..., "g1": ...,
#              "C1": ..., "D11": ..., "D12": ...,
#              "constraints": [{"g2": [...], "C2": [[...]], "D21": [[...]]}],
#              "g3": ..., "C3": ..., "D31": ..., "D32": ...}, ...]}
#
# All matrices are explicit row-major nested arrays; the affine vectors
# g1/g2/g3/f may be omitted and default to zero.


def _stage_to_dict(st: StageData) -> dict:
    return {
        "f": st.f.tolist(),
        "A": st.A.tolist(),
        "B1": st.B1.tolist(),
        "B2": st.B2.tolist(),
        "g1": st.g1.tolist(),
        "C1": st.C1.tolist(),
        "D11": st.D11.tolist(),
        "D12": st.D12.tolist(),
        "constraints": [
            {"g2": g2.tolist(), "C2": C2.tolist(), "D21": D21.tolist()}
            for g2, C2, D21 in st.constraints
        ],
        "g3": st.g3.tolist(),
        "C3": st.C3.tolist(),
        "D31": st.D31.tolist(),
        "D32": st.D32.tolist(),
    }


def _stage_from_dict(d: dict) -> StageData:
    def get(key, default=None):
        if key in d:
            return d[key]
        if default is not None:
            return default
        raise KeyError(f"stage is missing required matrix {key!r}")

    return StageData(
        f=np.array(d.get("f", []), dtype=float),
        A=get("A"),
        B1=get("B1"),
        B2=get("B2"),
        g1=np.array(d.get("g1", []), dtype=float),
        C1=get("C1"),
        D11=get("D11"),
        D12=get("D12"),
        constraints=tuple(
            (np.array(c.get("g2", []), dtype=float), c["C2"], c["D21"])
            for c in d.get("constraints", [])
        ),
        g3=np.array(d.get("g3", []), dtype=float),
        C3=get("C3"),
        D31=get("D31"),
        D32=get("D32"),
    )


def problem_to_dict(problem: Problem) -> dict:
    return {
        "kind": problem.kind,
        "x_bar": problem.x_bar.tolist(),
        "Pf": None if problem.Pf is None else problem.Pf.tolist(),
        "cone": [{"size": s, "bound": g} for s, g in problem.cone.channels],
        "stages": [_stage_to_dict(st) for st in problem.stages],
    }


def problem_from_dict(d: dict) -> Problem:
    return Problem(
        stages=tuple(_stage_from_dict(s) for s in d["stages"]),
        x_bar=np.array(d["x_bar"], dtype=float),
        cone=MultiplierCone(tuple((c["size"], c["bound"]) for c in d.get("cone", []))),
        kind=d["kind"],
        Pf=None if d.get("Pf") is None else np.array(d["Pf"], dtype=float),
    )


def save_problem(problem: Problem, path) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(problem_to_dict(problem), fp, indent=1)


def load_problem(path) -> Problem:
    with open(path, "r", encoding="utf-8") as fp:
        return problem_from_dict(json.load(fp))

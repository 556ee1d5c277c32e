"""Assembly of the synthesis matrix inequalities as affine PSD blocks.

Every block is an affine map x -> G0 + sum_j x_j G_j of a flat decision
vector into a symmetric matrix.  The decision vector packs, in order, the
inverse value-function matrices Pt_k, the transformed gains Kt_k, the
inverse peak bound nu_t, the initial-state slack Z and (for robust kinds)
the per-stage inverse multiplier parameters et_k.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import model
from .model import Problem

# Packed symmetric storage ---------------------------------------------------
#
# A symmetric d x d matrix M is stored as the length d(d+1)/2 vector
#
#   svec(M) = (M[0,0], sqrt(2) M[0,1], M[1,1], sqrt(2) M[0,2], ...)
#
# i.e. the upper triangle in column-major order with off-diagonal entries
# scaled by sqrt(2).  With this scaling the Euclidean inner product of two
# packed vectors equals the trace inner product of the matrices.

_SQRT2 = np.sqrt(2.0)


def sym_dim(d: int) -> int:
    return d * (d + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    d = M.shape[0]
    out = np.empty(sym_dim(d))
    t = 0
    for c in range(d):
        for r in range(c + 1):
            out[t] = M[r, c] if r == c else _SQRT2 * M[r, c]
            t += 1
    return out


def smat(v: np.ndarray, d: int) -> np.ndarray:
    M = np.zeros((d, d))
    t = 0
    for c in range(d):
        for r in range(c + 1):
            if r == c:
                M[r, c] = v[t]
            else:
                M[r, c] = M[c, r] = v[t] / _SQRT2
            t += 1
    return M


class LinMat:
    """A matrix-valued affine function of the decision vector.

    Stored as a constant plus a dict of dense coefficient matrices keyed by
    decision-variable index.  Only the handful of operations the block
    builders need are provided.
    """

    __slots__ = ("shape", "const", "coeffs")

    # Defer mixed ndarray @ LinMat products to __rmatmul__.
    __array_ufunc__ = None

    def __init__(self, shape, const=None, coeffs=None):
        self.shape = tuple(shape)
        self.const = np.zeros(self.shape) if const is None else np.array(const, dtype=float)
        self.coeffs: dict[int, np.ndarray] = {} if coeffs is None else coeffs

    @staticmethod
    def constant(M) -> "LinMat":
        M = np.atleast_2d(np.array(M, dtype=float))
        return LinMat(M.shape, const=M)

    @staticmethod
    def zeros(shape) -> "LinMat":
        return LinMat(shape)

    @staticmethod
    def scalar_var(index: int, M) -> "LinMat":
        """The scalar variable x[index] times a constant matrix."""
        M = np.atleast_2d(np.array(M, dtype=float))
        return LinMat(M.shape, coeffs={index: M.copy()})

    def copy(self) -> "LinMat":
        return LinMat(self.shape, self.const.copy(), {j: C.copy() for j, C in self.coeffs.items()})

    @property
    def T(self) -> "LinMat":
        return LinMat(
            (self.shape[1], self.shape[0]),
            self.const.T.copy(),
            {j: C.T.copy() for j, C in self.coeffs.items()},
        )

    def rows(self, start: int, stop: int) -> "LinMat":
        return LinMat(
            (stop - start, self.shape[1]),
            self.const[start:stop].copy(),
            {j: C[start:stop].copy() for j, C in self.coeffs.items()},
        )

    def __add__(self, other: "LinMat") -> "LinMat":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        out = self.copy()
        out.const += other.const
        for j, C in other.coeffs.items():
            if j in out.coeffs:
                out.coeffs[j] = out.coeffs[j] + C
            else:
                out.coeffs[j] = C.copy()
        return out

    def __rmatmul__(self, M) -> "LinMat":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return LinMat(
            (M.shape[0], self.shape[1]),
            M @ self.const,
            {j: M @ C for j, C in self.coeffs.items()},
        )

    def __matmul__(self, M) -> "LinMat":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return LinMat(
            (self.shape[0], M.shape[1]),
            self.const @ M,
            {j: C @ M for j, C in self.coeffs.items()},
        )

    def scaled(self, a: float) -> "LinMat":
        return LinMat(self.shape, a * self.const, {j: a * C for j, C in self.coeffs.items()})

    @staticmethod
    def vstack(parts) -> "LinMat":
        cols = parts[0].shape[1]
        rows = sum(p.shape[0] for p in parts)
        out = LinMat((rows, cols))
        r = 0
        for p in parts:
            out.add_at(r, 0, p)
            r += p.shape[0]
        return out

    def add_at(self, r: int, c: int, other: "LinMat") -> None:
        rr, cc = other.shape
        self.const[r : r + rr, c : c + cc] += other.const
        for j, C in other.coeffs.items():
            if j not in self.coeffs:
                self.coeffs[j] = np.zeros(self.shape)
            self.coeffs[j][r : r + rr, c : c + cc] += C

    def add_const_at(self, r: int, c: int, M) -> None:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        self.const[r : r + M.shape[0], c : c + M.shape[1]] += M

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for j, C in self.coeffs.items():
            out += x[j] * C
        return out

    def to_block(self, sense: str, name: str) -> "BlockLMI":
        if self.shape[0] != self.shape[1]:
            raise ValueError("only square affine matrices become blocks")
        g0 = 0.5 * (self.const + self.const.T)
        terms = []
        for j in sorted(self.coeffs):
            C = 0.5 * (self.coeffs[j] + self.coeffs[j].T)
            if np.any(C != 0.0):
                terms.append((j, C))
        return BlockLMI(name=name, sense=sense, g0=g0, terms=tuple(terms))


@dataclass(frozen=True)
class BlockLMI:
    """G0 + sum x_j G_j, required PSD / nonnegative (1x1) / identically zero."""

    name: str
    sense: str  # "psd" | "nonneg" | "zero"
    g0: np.ndarray
    terms: tuple[tuple[int, np.ndarray], ...]

    @property
    def dim(self) -> int:
        return self.g0.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        out = self.g0.copy()
        for j, C in self.terms:
            out += x[j] * C
        return out


# ---------------------------------------------------------------------------
# Decision layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Entry:
    kind: str  # "sym" | "mat" | "scalar" | "vec"
    shape: tuple
    offset: int
    size: int


class DecisionLayout:
    """Offsets of every decision block inside the flat vector.

    Keys are ("P", k) for k = 0..N, ("K", k) over the gain range of the
    problem kind, "nu", "Z" and ("e", k) over the multiplier range.
    Symmetric blocks are stored packed (see svec above); gain matrices are
    stored row-major.
    """

    def __init__(self, problem: Problem):
        n, m, N = problem.n, problem.m, problem.N
        d = 1 + n
        self.kind = problem.kind
        self.N = N
        self.aug_dim = d
        self.num_channels = problem.cone.num_channels
        self.gain_stages = range(N + 1) if problem.kind == model.ROBUST_INFINITE else range(N)
        if problem.kind == model.ROBUST_INFINITE:
            self.multiplier_stages = range(N + 1)
        elif problem.kind == model.ROBUST_FINITE:
            self.multiplier_stages = range(N)
        else:
            self.multiplier_stages = range(0)
        self._entries: dict = {}
        off = 0
        for k in range(N + 1):
            self._entries[("P", k)] = _Entry("sym", (d, d), off, sym_dim(d))
            off += sym_dim(d)
        for k in self.gain_stages:
            self._entries[("K", k)] = _Entry("mat", (m, d), off, m * d)
            off += m * d
        self._entries["nu"] = _Entry("scalar", (), off, 1)
        off += 1
        self._entries["Z"] = _Entry("sym", (d, d), off, sym_dim(d))
        off += sym_dim(d)
        for k in self.multiplier_stages:
            nc = self.num_channels
            self._entries[("e", k)] = _Entry("vec", (nc,), off, nc)
            off += nc
        self.dim = off

    def entry(self, key) -> _Entry:
        return self._entries[key]

    def keys(self):
        return self._entries.keys()

    def offset(self, key) -> int:
        return self._entries[key].offset

    def get(self, x: np.ndarray, key):
        e = self._entries[key]
        seg = x[e.offset : e.offset + e.size]
        if e.kind == "sym":
            return smat(seg, e.shape[0])
        if e.kind == "mat":
            return seg.reshape(e.shape)
        if e.kind == "scalar":
            return float(seg[0])
        return seg.copy()

    def set(self, x: np.ndarray, key, value) -> None:
        e = self._entries[key]
        if e.kind == "sym":
            x[e.offset : e.offset + e.size] = svec(np.asarray(value, dtype=float))
        elif e.kind == "mat":
            x[e.offset : e.offset + e.size] = np.asarray(value, dtype=float).reshape(-1)
        elif e.kind == "scalar":
            x[e.offset] = float(value)
        else:
            x[e.offset : e.offset + e.size] = np.asarray(value, dtype=float).reshape(-1)

    def linmat(self, key) -> LinMat:
        """The decision block itself as a LinMat."""
        e = self._entries[key]
        if e.kind == "sym":
            d = e.shape[0]
            out = LinMat((d, d))
            t = e.offset
            for c in range(d):
                for r in range(c + 1):
                    C = np.zeros((d, d))
                    if r == c:
                        C[r, c] = 1.0
                    else:
                        C[r, c] = C[c, r] = 1.0 / _SQRT2
                    out.coeffs[t] = C
                    t += 1
            return out
        if e.kind == "mat":
            rows, cols = e.shape
            out = LinMat(e.shape)
            t = e.offset
            for r in range(rows):
                for c in range(cols):
                    C = np.zeros(e.shape)
                    C[r, c] = 1.0
                    out.coeffs[t] = C
                    t += 1
            return out
        raise ValueError(f"linmat is defined for sym/mat entries, not {e.kind}")

    def scalar_index(self, key) -> int:
        e = self._entries[key]
        if e.kind != "scalar":
            raise ValueError(f"{key} is not scalar")
        return e.offset

    def vec_index(self, key, i: int) -> int:
        e = self._entries[key]
        if e.kind != "vec" or not (0 <= i < e.shape[0]):
            raise ValueError(f"bad vector component {key}[{i}]")
        return e.offset + i


@dataclass
class ConicProgram:
    """maximize c'x subject to the listed affine blocks."""

    c: np.ndarray
    blocks: list[BlockLMI]
    layout: DecisionLayout | None = None

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    def validate(self) -> None:
        for b in self.blocks:
            for j, C in b.terms:
                if not (0 <= j < self.num_vars):
                    raise ValueError(f"block {b.name} references unknown variable {j}")
                if C.shape != b.g0.shape:
                    raise ValueError(f"block {b.name}: coefficient shape mismatch")

    def dump_sparse(self, fp) -> None:
        """One line per nonzero: block-id var-id row col value.

        var-id -1 denotes the constant part; variables are 0-based.  For
        symmetric (psd/nonneg) blocks only the upper triangle (row <= col)
        is emitted; equality blocks are emitted in full.
        """
        own = False
        if isinstance(fp, (str, bytes)):
            fp = open(fp, "w", encoding="utf-8")
            own = True
        try:
            for bid, b in enumerate(self.blocks):
                mats = [(-1, b.g0)] + list(b.terms)
                for vid, M in mats:
                    for r in range(M.shape[0]):
                        lo = 0 if b.sense == "zero" else r
                        for c in range(lo, M.shape[1]):
                            if M[r, c] != 0.0:
                                fp.write(f"{bid} {vid} {r} {c} {M[r, c]:.17g}\n")
        finally:
            if own:
                fp.close()


# ---------------------------------------------------------------------------
# Block builders
# ---------------------------------------------------------------------------


def _gain_stack(problem: Problem, layout: DecisionLayout, k: int) -> LinMat:
    """[Pt_k; Kt_k], the right factor of every transformed data product."""
    return LinMat.vstack([layout.linmat(("P", k)), layout.linmat(("K", k))])


def _closed_data(st: model.StageData, rows: str, stack: LinMat) -> LinMat:
    """Transformed stage data (g~, C~) = [g C D] @ [Pt; Kt] for one output."""
    if rows == "dyn":
        M = np.hstack([st.f[:, None], st.A, st.B1])
    elif rows == "perf":
        M = np.hstack([st.g1[:, None], st.C1, st.D11])
    elif rows == "chan":
        M = np.hstack([st.g3[:, None], st.C3, st.D31])
    else:
        raise ValueError(rows)
    return M @ stack


def sqrt_sigma0(x_bar: np.ndarray) -> np.ndarray:
    """Closed-form PSD square root of (1, x)(1, x)' at the initial state."""
    v = np.concatenate([[1.0], np.asarray(x_bar, dtype=float)])
    return np.outer(v, v) / np.sqrt(v @ v)


def build_cost_lmi_nominal(problem: Problem, layout: DecisionLayout, k: int) -> BlockLMI:
    """Stagewise value-decrease block of the nominal program.

    Dimension 2(1+n)+p: diag slots Pt_{k+1}, I_p, Pt_k with the closed-loop
    data (first row of Pt_k stacked on the transformed dynamics) and the
    transformed performance rows as the couplings to the Pt_k corner.
    """
    if not (0 <= k <= problem.N - 1):
        raise IndexError(f"stage index {k} out of range for horizon {problem.N}")
    st = problem.stages[k]
    d, p = layout.aug_dim, problem.p
    Pk = layout.linmat(("P", k))
    stack = _gain_stack(problem, layout, k)
    FA = _closed_data(st, "dyn", stack)
    Y = _closed_data(st, "perf", stack)
    X = LinMat.vstack([Pk.rows(0, 1), FA])
    blk = LinMat.zeros((2 * d + p, 2 * d + p))
    blk.add_at(0, 0, layout.linmat(("P", k + 1)))
    blk.add_const_at(d, d, np.eye(p))
    blk.add_at(d + p, d + p, Pk)
    blk.add_at(0, d + p, X)
    blk.add_at(d + p, 0, X.T)
    blk.add_at(d, d + p, Y)
    blk.add_at(d + p, d, Y.T)
    return blk.to_block("psd", f"cost[k={k}]")


def build_initial_lmi(problem: Problem, layout: DecisionLayout) -> list[BlockLMI]:
    """Initial-state pair: the coupling block with the slack Z and the
    scalar trace condition nu_t - trace Z >= 0."""
    d = layout.aug_dim
    S0 = sqrt_sigma0(problem.x_bar)
    nu_idx = layout.scalar_index("nu")
    blk = LinMat.zeros((2 * d, 2 * d))
    blk.add_at(0, 0, layout.linmat(("P", 0)))
    blk.add_at(d, d, layout.linmat("Z"))
    blk.add_at(0, d, LinMat.scalar_var(nu_idx, S0))
    blk.add_at(d, 0, LinMat.scalar_var(nu_idx, S0))
    scalar = LinMat.zeros((1, 1))
    scalar.coeffs[nu_idx] = np.ones((1, 1))
    ze = layout.entry("Z")
    t = ze.offset
    for c in range(d):
        for r in range(c + 1):
            if r == c:
                scalar.coeffs[t] = -np.ones((1, 1))
            t += 1
    return [blk.to_block("psd", "initial"), scalar.to_block("nonneg", "trace")]


def build_terminal_lmi(
    problem: Problem, layout: DecisionLayout, ridge: float = 0.0
) -> BlockLMI:
    """Terminal block Pf^{-1} - Pt_N >= 0 (finite-horizon kinds only)."""
    if problem.kind == model.ROBUST_INFINITE:
        raise ValueError("the infinite-horizon kind replaces the terminal block by the tail block")
    Pf = problem.Pf
    if Pf is None:
        raise ValueError("terminal block requires Pf")
    Pf = 0.5 * (Pf + Pf.T)
    if ridge:
        Pf = Pf + ridge * np.eye(Pf.shape[0])
    if np.linalg.eigvalsh(Pf)[0] <= 1e-14 * max(1.0, float(np.linalg.norm(Pf))):
        raise ValueError(
            "terminal cost matrix is singular; pass ridge=1e-9 to regularize it"
        )
    blk = layout.linmat(("P", problem.N)).scaled(-1.0)
    blk.const += np.linalg.inv(Pf)
    return blk.to_block("psd", "terminal")


def build_constraint_lmi(problem: Problem, layout: DecisionLayout, k: int, i: int) -> BlockLMI:
    """Peak-bound block for constraint output i at stage k (0-based i)."""
    if not (0 <= k <= problem.N):
        raise IndexError(f"stage index {k} out of range")
    st = problem.stages[k]
    if not (0 <= i < st.s):
        raise IndexError(f"constraint index {i} out of range")
    g2, C2, D21 = st.constraints[i]
    r = C2.shape[0]
    d = layout.aug_dim
    stack = _gain_stack(problem, layout, k)
    row = np.hstack([g2[:, None], C2, D21]) @ stack
    blk = LinMat.zeros((d + r, d + r))
    blk.add_at(0, 0, layout.linmat(("P", k)))
    blk.add_at(d, 0, row)
    blk.add_at(0, d, row.T)
    blk.add_at(d, d, LinMat.scalar_var(layout.scalar_index("nu"), np.eye(r)))
    return blk.to_block("psd", f"constraint[k={k},i={i}]")


def _robust_block(
    problem: Problem,
    layout: DecisionLayout,
    k: int,
    next_idx: int,
    perf_slot: LinMat,
    name: str,
) -> BlockLMI:
    """Shared core of the robust stage block and the stationary tail block.

    The upper-left corner is the scaled block Q = T mid T' with
    T = [0 1 0 0 0; B2 0 I 0 0; D12 0 0 I 0; D32 0 0 0 I] and
    mid = blkdiag(Mt22, Pt_next, slot, Mt11); the border columns stack the
    first row of Pt_k with the transformed dynamics, performance and channel
    rows, and the lower-right corner is Pt_k.
    """
    st = problem.stages[k]
    n, p, q, l = problem.n, problem.p, problem.q, problem.l
    d = layout.aug_dim
    top = d + p + q  # rows of Q: (1, x+), y, z
    dim = top + d
    Tw = np.vstack([np.zeros((1, l)), st.B2, st.D12, st.D32])  # (top, l)
    blk = LinMat.zeros((dim, dim))
    # mid contribution of Pt_next through the (1, x+) selector rows.
    Pnext = layout.linmat(("P", next_idx))
    sel = np.zeros((top, d))
    sel[:d, :] = np.eye(d)
    blk.add_at(0, 0, sel @ Pnext @ sel.T)
    # performance slot (identity, or nu_t * identity for the printed variant).
    pad = LinMat.zeros((top, top))
    pad.add_at(d, d, perf_slot)
    blk.add_at(0, 0, pad)
    # channel multiplier: for each channel, et contributes
    # -gamma^2 et Tw_c Tw_c' on the disturbance columns and +et Ez_c Ez_c'
    # on the channel rows (the diagonal family has no cross blocks).
    slices = problem.cone.channel_slices()
    bounds = problem.cone.bounds
    for ci, sl in enumerate(slices):
        e_idx = layout.vec_index(("e", k), ci)
        Twc = Tw[:, sl]
        Ez = np.zeros((top, sl.stop - sl.start))
        Ez[d + p + sl.start : d + p + sl.stop, :] = np.eye(sl.stop - sl.start)
        C = Ez @ Ez.T - bounds[ci] ** 2 * (Twc @ Twc.T)
        blk.add_at(0, 0, LinMat.scalar_var(e_idx, C))
    # border and lower-right corner.
    Pk = layout.linmat(("P", k))
    stack = _gain_stack(problem, layout, k)
    border = LinMat.vstack(
        [
            Pk.rows(0, 1),
            _closed_data(st, "dyn", stack),
            _closed_data(st, "perf", stack),
            _closed_data(st, "chan", stack),
        ]
    )
    blk.add_at(0, top, border)
    blk.add_at(top, 0, border.T)
    blk.add_at(top, top, Pk)
    return blk.to_block("psd", name)


def build_robust_cost_lmi(problem: Problem, layout: DecisionLayout, k: int) -> BlockLMI:
    """Stagewise value-decrease block of the robust programs."""
    if not (0 <= k <= problem.N - 1):
        raise IndexError(f"stage index {k} out of range for horizon {problem.N}")
    if problem.cone.dim not in (problem.q,) or problem.q != problem.l:
        raise ValueError(
            f"channel dims (q={problem.q}, l={problem.l}) do not match the cone ({problem.cone.dim})"
        )
    slot = LinMat.constant(np.eye(problem.p))
    return _robust_block(problem, layout, k, k + 1, slot, f"robust_cost[k={k}]")


def build_infinite_tail_lmi(
    problem: Problem, layout: DecisionLayout, tail_scale: str = "identity"
) -> BlockLMI:
    """Stationary tail block: the robust stage block with both value-function
    slots tied to stage N.

    tail_scale selects the matrix in the performance slot of the scaled
    corner: "identity" (the form consistent with re-deriving the tail block
    by dualization, and the default) or "nu" (nu_t * I, the printed variant,
    kept for comparison).
    """
    if problem.kind != model.ROBUST_INFINITE:
        raise ValueError("tail block only exists for the robust_infinite kind")
    N = problem.N
    if tail_scale == "identity":
        slot = LinMat.constant(np.eye(problem.p))
    elif tail_scale == "nu":
        slot = LinMat.scalar_var(layout.scalar_index("nu"), np.eye(problem.p))
    else:
        raise ValueError(f"unknown tail_scale {tail_scale!r}")
    return _robust_block(problem, layout, N, N, slot, "tail")


def deflate_structural_kernel(block: BlockLMI, xi: np.ndarray) -> list[BlockLMI]:
    """Split a PSD block along a direction where its quadratic form vanishes
    identically.

    When xi' G(x) xi = 0 for every x (a structural property, not a choice of
    point), G(x) PSD is exactly equivalent to G(x) xi = 0 together with
    positive semidefiniteness of the restriction to the complement of xi.
    The restricted block has a nonempty interior, so eigenvalue-shift
    margins stay meaningful.
    """
    xi = np.asarray(xi, dtype=float)
    xi = xi / np.linalg.norm(xi)
    worst = max(
        abs(float(xi @ block.g0 @ xi)),
        max((abs(float(xi @ C @ xi)) for _, C in block.terms), default=0.0),
    )
    if worst > 1e-11:
        raise ValueError(f"direction is not structurally isotropic for {block.name}")
    dim = block.dim
    _, _, Vt = np.linalg.svd(xi[None, :])
    V = Vt[1:].T  # (dim, dim-1), orthonormal basis of xi-perp
    psd = BlockLMI(
        name=block.name,
        sense="psd",
        g0=V.T @ block.g0 @ V,
        terms=tuple((j, V.T @ C @ V) for j, C in block.terms if np.any(V.T @ C @ V != 0.0)),
    )
    eq = BlockLMI(
        name=block.name + "_kernel",
        sense="zero",
        g0=(block.g0 @ xi).reshape(dim, 1),
        terms=tuple(
            (j, (C @ xi).reshape(dim, 1))
            for j, C in block.terms
            if np.any(C @ xi != 0.0)
        ),
    )
    return [psd, eq]


def tail_kernel_direction(layout: DecisionLayout, p: int, q: int) -> np.ndarray:
    """Structural null direction of the tail block: the constant slot of the
    scaled corner minus the constant slot of the value-matrix corner."""
    d = layout.aug_dim
    dim = 2 * d + p + q
    xi = np.zeros(dim)
    xi[0] = 1.0
    xi[d + p + q] = -1.0
    return xi


def assemble_program(
    problem: Problem,
    tail_scale: str = "identity",
    mu: float = 1e-9,
    pf_ridge: float = 0.0,
    nu_cap: float = 1e6,
    p_cap: float | None = None,
) -> ConicProgram:
    """Full conic program for the problem kind, maximizing nu_t.

    Adds Pt_k >= mu I and et >= mu margins so that recovery by inversion
    stays well posed (the synthesis conditions need positive definite value
    matrices anyway).  The stationary tail block is structurally singular
    (both value-matrix corners are the same stage), so it is stored deflated:
    a PSD block on the complement of the structural null direction plus the
    affine kernel equality.

    nu_cap and p_cap keep the feasible set compact: at a zero-cost initial
    state the peak bound nu can approach 0, i.e. nu_t grows without bound,
    and the inverse value matrices have cost-free growth directions.  Both
    caps sit far outside the operating range of any interior solution, so
    they only matter where the supremum is not attained.
    """
    model.validate_or_raise(problem)
    layout = DecisionLayout(problem)
    N = problem.N
    blocks: list[BlockLMI] = []
    if problem.kind == model.NOMINAL_FINITE:
        for k in range(N):
            blocks.append(build_cost_lmi_nominal(problem, layout, k))
        constraint_range = range(N)
    elif problem.kind == model.ROBUST_FINITE:
        for k in range(N):
            blocks.append(build_robust_cost_lmi(problem, layout, k))
        constraint_range = range(N)
    else:
        for k in range(N):
            blocks.append(build_robust_cost_lmi(problem, layout, k))
        constraint_range = range(N + 1)
    for k in constraint_range:
        for i in range(problem.s):
            blocks.append(build_constraint_lmi(problem, layout, k, i))
    blocks.extend(build_initial_lmi(problem, layout))
    if problem.kind == model.ROBUST_INFINITE:
        tail = build_infinite_tail_lmi(problem, layout, tail_scale)
        xi = tail_kernel_direction(layout, problem.p, problem.q)
        blocks.extend(deflate_structural_kernel(tail, xi))
    else:
        blocks.append(build_terminal_lmi(problem, layout, ridge=pf_ridge))
    d = layout.aug_dim
    for k in range(N + 1):
        pd = layout.linmat(("P", k))
        pd.const -= mu * np.eye(d)
        blocks.append(pd.to_block("psd", f"P_pd[k={k}]"))
        if p_cap is not None:
            cap = layout.linmat(("P", k)).scaled(-1.0)
            cap.const += p_cap * np.eye(d)
            blocks.append(cap.to_block("psd", f"P_cap[k={k}]"))
    nu_blk = LinMat.zeros((1, 1))
    nu_blk.coeffs[layout.scalar_index("nu")] = -np.ones((1, 1))
    nu_blk.const += nu_cap
    blocks.append(nu_blk.to_block("nonneg", "nu_cap"))
    for k in layout.multiplier_stages:
        for ci in range(layout.num_channels):
            e = LinMat.zeros((1, 1))
            e.coeffs[layout.vec_index(("e", k), ci)] = np.ones((1, 1))
            e.const -= mu
            blocks.append(e.to_block("nonneg", f"e_pos[k={k},ch={ci}]"))
    c = np.zeros(layout.dim)
    c[layout.scalar_index("nu")] = 1.0
    prog = ConicProgram(c=c, blocks=blocks, layout=layout)
    prog.validate()
    return prog

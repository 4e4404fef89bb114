"""Backend-neutral conic programs and the solver binding.

A :class:`ConicProblem` is::

    minimize    c . v
    subject to  A v = b
                F_i v + g_i  in  K_i      for every cone block i

with ``K_i`` one of

``nonneg``  the nonnegative orthant of dimension ``size``;
``soc``     the second-order cone ``{(t, w) : ||w|| <= t}`` of dimension ``size``;
``psd``     symmetric ``size x size`` PSD matrices. The block's rows are the
            lower triangle in row-major order, i.e. ``(0,0), (1,0), (1,1),
            (2,0), ...``, holding the plain (unscaled) matrix entries. The
            sqrt(2) off-diagonal scaling needed by the backend is applied
            internally.

Variables not touched by any cone are free.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg as la

log = logging.getLogger(__name__)

CONE_KINDS = ("nonneg", "soc", "psd")
MAX_ITER_ENV = "SOSROM_MAX_ITER"

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"
NUMERICAL_ERROR = "numerical_error"


class InvalidProblemError(ValueError):
    pass


def tri_size(n: int) -> int:
    return n * (n + 1) // 2


def tri_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the lower triangle in row-major order."""
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def sym_from_tri(vec, n: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.size != tri_size(n):
        raise ValueError(f"expected {tri_size(n)} entries for a {n}x{n} matrix")
    S = np.zeros((n, n))
    i, j = tri_indices(n)
    S[i, j] = vec
    S[j, i] = vec
    return S


def tri_from_sym(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    i, j = tri_indices(S.shape[0])
    return S[i, j].copy()


@dataclass
class ConeBlock:
    kind: str
    size: int
    F: sp.csr_matrix
    g: np.ndarray

    @property
    def n_rows(self) -> int:
        return tri_size(self.size) if self.kind == "psd" else self.size


@dataclass
class ConicProblem:
    n_vars: int
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list[ConeBlock] = field(default_factory=list)

    @classmethod
    def empty(cls, n_vars: int) -> "ConicProblem":
        return cls(n_vars, np.zeros(n_vars), sp.csr_matrix((0, n_vars)), np.zeros(0), [])

    def add_equalities(self, A, b) -> None:
        A = sp.csr_matrix(A)
        b = np.atleast_1d(np.asarray(b, dtype=float))
        self.A = sp.vstack([self.A, A], format="csr")
        self.b = np.concatenate([self.b, b])

    def add_cone(self, kind: str, size: int, F, g=None) -> None:
        F = sp.csr_matrix(F)
        g = np.zeros(F.shape[0]) if g is None else np.asarray(g, dtype=float)
        self.cones.append(ConeBlock(kind, int(size), F, g))

    def validate(self) -> None:
        c = np.asarray(self.c, dtype=float)
        if c.shape != (self.n_vars,):
            raise InvalidProblemError("objective length does not match the variable count")
        if self.A.shape[1] != self.n_vars or self.A.shape[0] != self.b.size:
            raise InvalidProblemError("equality system has inconsistent dimensions")
        for i, cone in enumerate(self.cones):
            if cone.kind not in CONE_KINDS:
                raise InvalidProblemError(f"cone {i}: unknown kind {cone.kind!r}")
            if cone.size < 1:
                raise InvalidProblemError(f"cone {i}: size must be positive")
            if cone.F.shape != (cone.n_rows, self.n_vars) or cone.g.shape != (cone.n_rows,):
                raise InvalidProblemError(
                    f"cone {i} ({cone.kind}, size {cone.size}) expects {cone.n_rows} rows over "
                    f"{self.n_vars} variables, got F{cone.F.shape}, g{cone.g.shape}")
        for arr in (c, self.b, self.A.data):
            if not np.all(np.isfinite(arr)):
                raise InvalidProblemError("problem data contains non-finite values")

    def cone_margins(self, v) -> list[float]:
        """Distance-to-boundary style margin of each cone block at ``v``.

        Minimum entry for ``nonneg``, ``t - ||w||`` for ``soc`` and the minimum
        eigenvalue for ``psd``; negative means violated.
        """
        out = []
        for cone in self.cones:
            s = cone.F @ v + cone.g
            if cone.kind == "nonneg":
                out.append(float(s.min()))
            elif cone.kind == "soc":
                out.append(float(s[0] - np.linalg.norm(s[1:])))
            else:
                out.append(float(np.linalg.eigvalsh(sym_from_tri(s, cone.size))[0]))
        return out

    def dump(self, path) -> None:
        """Write a plain-text debug dump: header, cone list, objective, COO triplets."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# conic problem: {self.n_vars} variables, {self.b.size} equalities\n")
            fh.write(f"cones {len(self.cones)}\n")
            for cone in self.cones:
                fh.write(f"{cone.kind} {cone.size} rows={cone.n_rows}\n")
            fh.write("objective\n")
            for j in np.flatnonzero(self.c):
                fh.write(f"{j} {self.c[j]!r}\n")
            A = self.A.tocoo()
            fh.write(f"equalities {A.nnz}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {v!r}\n")
            fh.write("rhs\n")
            for i, v in enumerate(self.b):
                fh.write(f"{i} {v!r}\n")
            for k, cone in enumerate(self.cones):
                F = cone.F.tocoo()
                fh.write(f"cone {k} {cone.kind} {cone.size} nnz={F.nnz}\n")
                for i, j, v in zip(F.row, F.col, F.data):
                    fh.write(f"{i} {j} {v!r}\n")
                fh.write("offset\n")
                for i in np.flatnonzero(cone.g):
                    fh.write(f"{i} {cone.g[i]!r}\n")


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int | None = None
    verbose: bool = False

    def iteration_cap(self) -> int:
        if self.max_iter is not None:
            return int(self.max_iter)
        return int(os.environ.get(MAX_ITER_ENV, 200))


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    eq_residual: float
    cone_margin: float
    iterations: int = 0
    solve_time: float = 0.0
    backend_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _svec_scaling(n: int) -> np.ndarray:
    i, j = tri_indices(n)
    return np.where(i == j, 1.0, np.sqrt(2.0))


def _status_name(status) -> str:
    return str(status).split(".")[-1]


def solve(problem: ConicProblem, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve with the Clarabel interior-point method.

    Equality rows are scaled to unit infinity norm before the solve. Residuals
    and cone margins in the returned solution are measured on the original,
    unscaled problem.
    """
    import clarabel

    settings = settings or SolverSettings()
    problem.validate()
    n = problem.n_vars

    A = problem.A.tocsr()
    b = problem.b.copy()
    row_norm = np.abs(A).max(axis=1).toarray().ravel() if A.shape[0] else np.zeros(0)
    empty_rows = row_norm == 0
    if np.any(empty_rows & (np.abs(b) > settings.feas_tol)):
        return ConicSolution(PRIMAL_INFEASIBLE, np.full(n, np.nan), np.nan, np.inf, -np.inf,
                             backend_status="inconsistent empty equality row")
    keep = ~empty_rows
    scale = 1.0 / row_norm[keep]
    A_eq = sp.diags(scale) @ A[keep]
    b_eq = b[keep] * scale

    blocks = [A_eq]
    rhs = [b_eq]
    cones = [clarabel.ZeroConeT(int(A_eq.shape[0]))] if A_eq.shape[0] else []
    for cone in problem.cones:
        F, g = cone.F, cone.g
        if cone.kind == "psd":
            w = _svec_scaling(cone.size)
            F = sp.diags(w) @ F
            g = g * w
            cones.append(clarabel.PSDTriangleConeT(cone.size))
        elif cone.kind == "soc":
            cones.append(clarabel.SecondOrderConeT(cone.size))
        else:
            cones.append(clarabel.NonnegativeConeT(cone.size))
        blocks.append(-F)
        rhs.append(g)
    # clarabel form: G v + s = h with s in K; s = F v + g gives G = -F, h = g
    G = sp.vstack(blocks, format="csc")
    h = np.concatenate(rhs) if rhs else np.zeros(0)
    P = sp.csc_matrix((n, n))

    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.iteration_cap()
    opts.tol_feas = settings.feas_tol
    opts.tol_gap_abs = settings.gap_tol
    opts.tol_gap_rel = settings.gap_tol
    opts.presolve_enable = False

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, np.asarray(problem.c, dtype=float), G, h, cones, opts)
    result = solver.solve()
    elapsed = time.perf_counter() - t0

    raw = _status_name(result.status)
    x = np.asarray(result.x, dtype=float)
    eq_res = float(np.max(np.abs(A @ x - b))) if b.size else 0.0
    margins = problem.cone_margins(x)
    margin = min(margins) if margins else np.inf
    acceptable = eq_res <= max(settings.feas_tol, 1e-6) and margin >= -max(settings.feas_tol, 1e-6)
    if raw == "Solved" or (raw == "AlmostSolved" and acceptable):
        status = OPTIMAL
    elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = PRIMAL_INFEASIBLE
    elif raw in ("DualInfeasible", "AlmostDualInfeasible"):
        status = DUAL_INFEASIBLE
    elif raw == "MaxIterations":
        status = MAX_ITER
    else:
        status = NUMERICAL_ERROR
    log.debug("clarabel %s in %d iterations (%.3fs)", raw, result.iterations, elapsed)
    return ConicSolution(status=status, x=x, objective=float(problem.c @ x), eq_residual=eq_res,
                         cone_margin=float(margin), iterations=int(result.iterations),
                         solve_time=elapsed, backend_status=raw)


def least_squares(A, b) -> np.ndarray:
    """Minimum-norm solution of ``min ||A v - b||`` via a complete orthogonal factorization."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    v, *_ = la.lstsq(A, b, lapack_driver="gelsy")
    return v

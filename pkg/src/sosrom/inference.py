"""Stability-constrained operator inference for second-order polynomial ROMs.

Model structure::

    M x'' + C x' + grad(k . phi(x)) = B u

The residual of this equation on reduced snapshot data is linear in
``theta = (M, C, B, k)``. The inference programs minimize its Frobenius norm
subject to

``iss``            M >= delta_M I, C >= delta_C I, k.phi - eps||x||^2 SOS and
                   x.grad(k.phi) - eps||x||^2 SOS;
``bounded``        M >= delta_M I, C >= 0, k.phi - eps||x||^2 SOS;
``unconstrained``  no stability constraints (baseline).

The residual is homogeneous in ``theta``, so every mode also fixes the scale
with ``trace(M) = r``; the dynamics are unchanged by a common positive scaling
of all operators.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg as la

from . import conic
from .clustering import ClusterSelection
from .conic import ConicProblem, SolverSettings, sym_from_tri, tri_from_sym, tri_indices, tri_size
from .monomials import PolynomialGradient, basis_jacobian, eval_polynomial
from .pod import ReducedDataset
from .sos import (CertificateReport, MODES, assemble_positivity_constraints,
                  verify_certificate)

log = logging.getLogger(__name__)


class InferenceFailedError(RuntimeError):
    def __init__(self, status: str, message: str = ""):
        super().__init__(message or f"conic solver finished with status {status!r}")
        self.status = status


class CertificateInvalidError(RuntimeError):
    def __init__(self, report: CertificateReport):
        super().__init__(f"certificate checks failed: {', '.join(report.failures())}")
        self.report = report


@dataclass
class Hyperparams:
    """Strictness margins of the constrained programs.

    ``delta_M`` and ``delta_C`` are floors on the smallest eigenvalues of ``M``
    and ``C`` in units where ``trace(M) = r``. ``eps`` is the margin of the SOS
    constraints; when it is ``None`` it is taken as
    ``eps_rel * median_i ||x_i||^2`` over the (internally normalized) reduced
    snapshots, which is ``eps_rel`` itself.
    """

    eps: float | None = None
    delta_M: float = 1e-6
    delta_C: float = 1e-6
    eps_rel: float = 1e-6

    def resolve_eps(self, X: np.ndarray) -> float:
        if self.eps is not None:
            return float(self.eps)
        sq = np.sum(np.asarray(X) ** 2, axis=0)
        med = float(np.median(sq)) if sq.size else 0.0
        return self.eps_rel * (med if med > 0 else 1.0)


@dataclass
class VariableLayout:
    r: int
    n_u: int
    n_phi: int
    gram_sizes: list[int]
    families: tuple[str, ...]

    def __post_init__(self):
        nt = tri_size(self.r)
        self.M = slice(0, nt)
        self.C = slice(nt, 2 * nt)
        self.B = slice(2 * nt, 2 * nt + self.r * self.n_u)
        self.k = slice(self.B.stop, self.B.stop + self.n_phi)
        self.n_theta = self.k.stop
        n_gram = sum(tri_size(n) for n in self.gram_sizes)
        self.grams = {}
        start = self.n_theta
        for fam in self.families:
            self.grams[fam] = slice(start, start + n_gram)
            start += n_gram
        self.t = start
        self.n_vars = start + 1

    def theta_to_operators(self, theta):
        theta = np.asarray(theta, dtype=float)
        M = sym_from_tri(theta[self.M], self.r)
        C = sym_from_tri(theta[self.C], self.r)
        B = theta[self.B].reshape(self.r, self.n_u)
        return M, C, B, theta[self.k].copy()

    def operators_to_theta(self, M, C, B, k) -> np.ndarray:
        return np.concatenate([tri_from_sym(M), tri_from_sym(C),
                               np.asarray(B, dtype=float).reshape(-1), np.asarray(k, dtype=float)])


@dataclass
class ResidualSystem:
    """Stacked linear map ``theta -> residual``, rows ordered snapshot-major."""

    blocks: np.ndarray  # (N, r, n_theta)
    layout: VariableLayout

    @property
    def matrix(self) -> np.ndarray:
        N, r, n = self.blocks.shape
        return self.blocks.reshape(N * r, n)

    def residual(self, theta) -> np.ndarray:
        """Residual as an ``(r, N)`` array."""
        return (self.blocks @ np.asarray(theta, dtype=float)).T


def build_residual_blocks(data: ReducedDataset, selection: ClusterSelection) -> ResidualSystem:
    """Per-snapshot linear maps from ``(M, C, B, k)`` to
    ``M x''_i + C x'_i + Phi'(x_i) k - B u_i``.
    """
    r, N, n_u = data.r, data.N, data.n_u
    if selection.r != r:
        raise ValueError(f"selection is over {selection.r} variables but data has r={r}")
    for name in ("Xdot", "Xddot"):
        if getattr(data, name).shape != data.X.shape:
            raise ValueError(f"{name} does not match X in shape")
    if data.U.shape[1] != N:
        raise ValueError("input snapshots do not match the state snapshots")
    layout = VariableLayout(r, n_u, len(selection.phi), [], ())
    blocks = np.zeros((N, r, layout.n_theta))
    ii, jj = tri_indices(r)
    for t, (p, q) in enumerate(zip(ii, jj)):
        for sl, Z in ((layout.M, data.Xddot), (layout.C, data.Xdot)):
            col = sl.start + t
            blocks[:, p, col] += Z[q]
            if p != q:
                blocks[:, q, col] += Z[p]
    for j in range(r):
        for l in range(n_u):
            blocks[:, j, layout.B.start + j * n_u + l] = -data.U[l]
    if len(selection.phi):
        blocks[:, :, layout.k] = basis_jacobian(selection.phi, data.X)
    return ResidualSystem(blocks, layout)


def _compressed(A: np.ndarray) -> np.ndarray:
    # ||A theta|| = ||R theta|| for the triangular QR factor; far fewer SOC rows
    if A.shape[0] <= A.shape[1]:
        return A
    return la.qr(A, mode="r", check_finite=False)[0][: A.shape[1]]


def assemble_problem(data: ReducedDataset, selection: ClusterSelection, mode: str,
                     hyperparams: Hyperparams | None = None):
    """Build the conic program for one inference mode.

    Returns the :class:`~sosrom.conic.ConicProblem`, the variable layout and
    the positivity-constraint description (``None`` in unconstrained mode).
    Variables are ordered ``M (lower tri), C (lower tri), B (row-major), k,
    Gram blocks, t``; the objective is ``t`` with ``(t, residual)`` in a
    second-order cone.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    hp = hyperparams or Hyperparams()
    system = build_residual_blocks(data, selection)
    pos = None
    if mode != "unconstrained":
        pos = assemble_positivity_constraints(selection, hp.resolve_eps(data.X), mode)
    layout = VariableLayout(data.r, data.n_u, len(selection.phi),
                            pos.coef_map.sizes if pos else [], pos.families if pos else ())
    n = layout.n_vars
    r = data.r
    prob = ConicProblem.empty(n)
    prob.c[layout.t] = 1.0

    trace_row = np.zeros(n)
    ii, jj = tri_indices(r)
    trace_row[layout.M.start + np.flatnonzero(ii == jj)] = 1.0
    prob.add_equalities(trace_row[None, :], [float(r)])

    R = _compressed(system.matrix)
    soc = sp.lil_matrix((1 + R.shape[0], n))
    soc[0, layout.t] = 1.0
    soc[1:, : layout.n_theta] = R
    prob.add_cone("soc", soc.shape[0], soc)

    if pos is not None:
        eye_tri = tri_from_sym(np.eye(r))
        nt = tri_size(r)
        sel_M = sp.csr_matrix((np.ones(nt), (np.arange(nt), layout.M.start + np.arange(nt))),
                              shape=(nt, n))
        sel_C = sp.csr_matrix((np.ones(nt), (np.arange(nt), layout.C.start + np.arange(nt))),
                              shape=(nt, n))
        prob.add_cone("psd", r, sel_M, -hp.delta_M * eye_tri)
        c_floor = hp.delta_C if mode == "iss" else 0.0
        prob.add_cone("psd", r, sel_C, -c_floor * eye_tri)
        for fam in pos.families:
            base = layout.grams[fam].start
            for size, off in zip(pos.coef_map.sizes, pos.coef_map.offsets):
                m = tri_size(size)
                F = sp.csr_matrix((np.ones(m), (np.arange(m), base + off + np.arange(m))),
                                  shape=(m, n))
                prob.add_cone("psd", size, F)
        A_eq, b_eq = pos.equality_system(n, layout.k.start,
                                         {f: layout.grams[f].start for f in pos.families})
        prob.add_equalities(A_eq, b_eq)
    return prob, layout, pos


@dataclass
class RomModel:
    """Inferred second-order polynomial ROM with its stability certificates."""

    M: np.ndarray
    C: np.ndarray
    B: np.ndarray
    k: np.ndarray
    selection: ClusterSelection
    mode: str
    hyperparams: dict
    grams: list[np.ndarray] = field(default_factory=list)
    hgrams: list[np.ndarray] | None = None
    V: np.ndarray | None = None
    sigma: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.M.shape[0], -1)
        self.k = np.asarray(self.k, dtype=float)
        self._grad = None

    @property
    def r(self) -> int:
        return self.M.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def phi(self):
        return self.selection.phi

    def potential(self, x):
        return eval_polynomial(self.phi, self.k, x)

    def gradient(self, x):
        if self._grad is None:
            self._grad = PolynomialGradient(self.phi, self.k)
        return self._grad(x)

    def stiffness_hessian(self, x):
        if self._grad is None:
            self._grad = PolynomialGradient(self.phi, self.k)
        return self._grad.hessian(x)

    def residual(self, data: ReducedDataset) -> np.ndarray:
        return (self.M @ data.Xddot + self.C @ data.Xdot + self.gradient(data.X)
                - self.B @ data.U)

    def scaled(self, gamma: float) -> "RomModel":
        """Same dynamics with all operators multiplied by ``gamma``."""
        return RomModel(gamma * self.M, gamma * self.C, gamma * self.B, gamma * self.k,
                        self.selection, self.mode, dict(self.hyperparams),
                        [gamma * G for G in self.grams],
                        None if self.hgrams is None else [gamma * H for H in self.hgrams],
                        self.V, self.sigma, dict(self.provenance))


@dataclass
class InferenceReport:
    objective: float
    status: str
    t_inf: float
    n_vars: int
    n_equalities: int
    n_phi: int
    psd_blocks: list[int]
    iterations: int = 0
    solver_objective: float | None = None
    certificate: dict | None = None
    scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def _data_scale(X: np.ndarray) -> float:
    sq = np.sum(X**2, axis=0)
    med = float(np.median(sq)) if sq.size else 0.0
    if med > 0:
        return float(np.sqrt(med))
    peak = float(np.max(np.abs(X), initial=0.0))
    return peak if peak > 0 else 1.0


def _scaled_data(data: ReducedDataset, s: float) -> ReducedDataset:
    return ReducedDataset(V=data.V, sigma=data.sigma, X=data.X / s, Xdot=data.Xdot / s,
                          Xddot=data.Xddot / s, U=data.U, dt=data.dt,
                          sigma_full=data.sigma_full, segments=list(data.segments))


def _psd_clip(G: np.ndarray) -> np.ndarray:
    G = 0.5 * (G + G.T)
    lam, Q = np.linalg.eigh(G)
    return (Q * np.maximum(lam, 0.0)) @ Q.T


def _polish(sol_x, layout: VariableLayout, pos, max_rounds: int = 50):
    """Make the SOS equalities hold to rounding error.

    Gram blocks of the ``G`` family are projected onto the PSD cone and ``k`` is
    recomputed from them, so ``k.phi - eps||x||^2 = sum psi^T G psi`` exactly.
    In iss mode the ``H`` family is then moved to the nearest point satisfying
    its (now exact) equalities, alternating with PSD projection.
    """
    cmap = pos.coef_map
    grams = [_psd_clip(G) for G in cmap.unstack(sol_x[layout.grams["G"]])]
    k = cmap.apply(grams) + pos.quad
    hgrams = None
    if "H" in pos.families:
        A = cmap.matrix
        # each Gram entry maps to exactly one monomial, so A A^T is diagonal
        diag = np.asarray(A.multiply(A).sum(axis=1)).ravel()
        target = pos.weights * k - pos.quad
        h = cmap.stack(cmap.unstack(sol_x[layout.grams["H"]]))
        for _ in range(max_rounds):
            h = h + A.T @ ((target - A @ h) / diag)
            blocks = cmap.unstack(h)
            if min(np.linalg.eigvalsh(H)[0] for H in blocks) >= -1e-12:
                break
            h = cmap.stack([_psd_clip(H) for H in blocks])
        hgrams = cmap.unstack(h)
    return k, grams, hgrams


def _unscale(M, C, B, k, grams, hgrams, selection: ClusterSelection, s: float):
    """Map a model fitted on ``x / s`` back to ``x`` coordinates, keeping ``trace(M)``.

    With ``x_hat = x / s`` the operators transform as ``M, C`` unchanged,
    ``B -> s B`` and ``k_a -> k_a s^(2-|a|)``; the Gram blocks follow by the
    congruence ``G -> s^2 D G D`` with ``D = diag(s^-|psi_p|)``, which keeps
    them PSD and keeps the SOS identities intact.
    """
    deg = selection.phi.degrees
    k = k * s ** (2.0 - deg)

    def congruent(blocks):
        out = []
        for psi, G in zip(selection.psi_bases, blocks):
            d = s ** (-psi.degrees.astype(float))
            S = s**2 * (d[:, None] * G * d[None, :])
            out.append(0.5 * (S + S.T))
        return out

    return (M, C, B * s, k, congruent(grams),
            None if hgrams is None else congruent(hgrams))


def _solve_unconstrained(system: ResidualSystem) -> np.ndarray:
    # eliminate M_00 through trace(M) = r and solve the plain least-squares problem
    A = system.matrix
    layout = system.layout
    r = layout.r
    ii, jj = tri_indices(r)
    diag_cols = layout.M.start + np.flatnonzero(ii == jj)
    c0 = diag_cols[0]
    keep = np.setdiff1d(np.arange(layout.n_theta), [c0])
    A_red = A[:, keep].copy()
    for c in diag_cols[1:]:
        A_red[:, np.searchsorted(keep, c)] -= A[:, c0]
    z = conic.least_squares(A_red, -r * A[:, c0])
    theta = np.zeros(layout.n_theta)
    theta[keep] = z
    theta[c0] = r - z[np.searchsorted(keep, diag_cols[1:])].sum()
    return theta


def infer(data: ReducedDataset, selection: ClusterSelection, mode: str = "bounded",
          hyperparams: Hyperparams | None = None, settings: SolverSettings | None = None,
          verify: bool = True, n_samples: int = 10_000, seed: int = 42):
    """Infer a ROM from reduced data.

    The data is normalized internally (``x -> x / s`` with ``s`` the RMS-median
    snapshot norm) before the program is assembled; the returned operators are
    in the original reduced coordinates, with ``trace(M) = r``.

    Returns
    -------
    model : RomModel
    report : InferenceReport

    Raises
    ------
    InferenceFailedError
        The conic solver did not reach an optimal status.
    CertificateInvalidError
        The a-posteriori certificate checks failed.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    hp = hyperparams or Hyperparams()
    t0 = time.perf_counter()
    s = _data_scale(data.X)
    scaled = _scaled_data(data, s)
    eps = hp.resolve_eps(scaled.X)
    resolved = {"eps": eps, "delta_M": hp.delta_M, "delta_C": hp.delta_C}

    if mode == "unconstrained":
        system = build_residual_blocks(scaled, selection)
        theta = _solve_unconstrained(system)
        M, C, B, k = system.layout.theta_to_operators(theta)
        grams, hgrams = [], None
        status, iterations, solver_obj = conic.OPTIMAL, 0, float(np.linalg.norm(system.matrix @ theta))
        n_vars = system.layout.n_theta
        n_eq, psd_sizes = 1, []
    else:
        prob, layout, pos = assemble_problem(scaled, selection, mode,
                                             Hyperparams(eps, hp.delta_M, hp.delta_C))
        sol = conic.solve(prob, settings)
        if not sol.optimal:
            raise InferenceFailedError(sol.status)
        M, C, B, _ = layout.theta_to_operators(sol.x[: layout.n_theta])
        k, grams, hgrams = _polish(sol.x, layout, pos)
        status, iterations, solver_obj = sol.status, sol.iterations, sol.objective
        n_vars, n_eq = prob.n_vars, prob.b.size
        psd_sizes = [c.size for c in prob.cones if c.kind == "psd"]

    M, C, B, k, grams, hgrams = _unscale(M, C, B, k, grams, hgrams, selection, s)
    model = RomModel(M=M, C=C, B=B, k=k, selection=selection, mode=mode,
                     hyperparams=resolved, grams=grams, hgrams=hgrams, V=data.V,
                     sigma=data.sigma_full if data.sigma_full is not None else data.sigma,
                     provenance={"data_sha256": data.digest(), "n_snapshots": data.N,
                                 "dt": data.dt, "scale": s})
    t_inf = time.perf_counter() - t0
    cert = None
    if verify and mode != "unconstrained":
        report = verify_certificate(model, n_samples=n_samples, seed=seed)
        cert = report.to_dict()
        if not report.passed:
            raise CertificateInvalidError(report)
    objective = float(np.linalg.norm(model.residual(data)))
    rep = InferenceReport(objective=objective, status=status, t_inf=t_inf, n_vars=n_vars,
                          n_equalities=n_eq, n_phi=len(selection.phi), psd_blocks=psd_sizes,
                          iterations=iterations, solver_objective=solver_obj, certificate=cert,
                          scale=s)
    log.info("inferred %s ROM: r=%d, n_phi=%d, objective=%.4g, %.2fs", mode, data.r,
             len(selection.phi), objective, t_inf)
    return model, rep


def feasible_point(layout: VariableLayout, pos, hp: Hyperparams) -> np.ndarray:
    """The trivially feasible point ``M = I, C = delta_C I, B = 0, G_i = 0``.

    ``k`` then equals ``eps ||x||^2`` and ``H_i`` carries the Euler-weighted
    surplus. Used to check that constrained programs are never infeasible.
    """
    r = layout.r
    v = np.zeros(layout.n_vars)
    v[layout.M] = tri_from_sym(np.eye(r))
    v[layout.C] = tri_from_sym(hp.delta_C * np.eye(r))
    v[layout.k] = pos.quad
    if "H" in pos.families:
        # x.grad(eps||x||^2) - eps||x||^2 = eps||x||^2: put eps/c_j on the x_j diagonals
        v[layout.grams["H"]] = pos.coef_map.stack(pos.offsets)
    return v

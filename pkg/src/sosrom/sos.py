"""Cluster-structured Gram parametrization of SOS polynomials.

For a selection with clusters ``c_1..c_m`` and factor bases ``psi_i`` (monomials
of degree 1..d/2 in the cluster variables), a polynomial is certified by
symmetric PSD matrices ``G_i`` through

    p(x) = sum_i psi_i(x)^T G_i psi_i(x).

Gram matrices are stored as lower-triangle vectors in row-major order (the same
convention as :mod:`sosrom.conic`) and stacked cluster by cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .clustering import ClusterSelection
from .conic import sym_from_tri, tri_indices, tri_size
from .monomials import eval_basis, eval_gradient, eval_polynomial, euler_weights

MODES = ("iss", "bounded", "unconstrained")


class CoefficientMapError(ValueError):
    pass


@dataclass
class CoefficientMap:
    """Linear map from stacked Gram lower triangles to coefficients over ``phi``."""

    matrix: sp.csr_matrix
    sizes: list[int]
    offsets: list[int]

    @property
    def n_gram(self) -> int:
        return self.matrix.shape[1]

    def stack(self, grams: Sequence[np.ndarray]) -> np.ndarray:
        tri = []
        for G, n in zip(grams, self.sizes):
            G = np.asarray(G, dtype=float)
            if G.shape != (n, n):
                raise ValueError(f"Gram block must be {n}x{n}, got {G.shape}")
            i, j = tri_indices(n)
            tri.append(0.5 * (G[i, j] + G[j, i]))
        return np.concatenate(tri) if tri else np.zeros(0)

    def unstack(self, vec) -> list[np.ndarray]:
        vec = np.asarray(vec, dtype=float)
        return [sym_from_tri(vec[o:o + tri_size(n)], n) for o, n in zip(self.offsets, self.sizes)]

    def apply(self, grams: Sequence[np.ndarray]) -> np.ndarray:
        return self.matrix @ self.stack(grams)


def build_coefficient_map(selection: ClusterSelection) -> CoefficientMap:
    """Map Gram entries to the coefficients of ``sum_i psi_i^T G_i psi_i`` over ``phi``.

    Off-diagonal entries stand for both ``(p, q)`` and ``(q, p)`` and so enter
    with weight 2.
    """
    phi = selection.phi
    rows, cols, vals = [], [], []
    sizes, offsets = [], []
    offset = 0
    for psi in selection.psi_bases:
        E = psi.exponents
        n = len(psi)
        ii, jj = tri_indices(n)
        for t, (p, q) in enumerate(zip(ii, jj)):
            alpha = tuple(int(a) for a in E[p] + E[q])
            if alpha not in phi:
                raise CoefficientMapError(
                    f"product monomial {alpha} is missing from phi; the selection is inconsistent")
            rows.append(phi.index(alpha))
            cols.append(offset + t)
            vals.append(1.0 if p == q else 2.0)
        sizes.append(n)
        offsets.append(offset)
        offset += tri_size(n)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(phi), offset))
    return CoefficientMap(matrix, sizes, offsets)


def positivity_offsets(selection: ClusterSelection, eps: float):
    """Split ``eps * ||x||^2`` over the clusters.

    Variable ``j`` is shared equally by the ``c_j`` clusters that contain it,
    so each gets ``eps / c_j`` on the diagonal entry of ``x_j`` in its factor
    basis. Returns the per-cluster diagonal matrices and their combined
    coefficient vector over ``phi`` (``eps`` at every ``x_j**2``).
    """
    counts = selection.cover_counts()
    if np.any(counts == 0):
        raise ValueError("selection does not cover every variable")
    r = selection.r
    D = []
    for c, psi in zip(selection.clusters, selection.psi_bases):
        diag = np.zeros(len(psi))
        for j in c:
            e = [0] * r
            e[j] = 1
            diag[psi.index(e)] = eps / counts[j]
        D.append(np.diag(diag))
    quad = np.zeros(len(selection.phi))
    for j in range(r):
        e = [0] * r
        e[j] = 2
        try:
            quad[selection.phi.index(e)] = eps
        except KeyError:
            raise CoefficientMapError(f"quadratic monomial x_{j}^2 missing from phi") from None
    return D, quad


@dataclass
class PositivityConstraints:
    """Gram blocks and coefficient-matching equalities of the SOS constraints.

    Family ``"G"`` certifies ``k.phi(x) - eps||x||^2 = sum psi^T G psi``.
    Family ``"H"`` (iss mode only) certifies
    ``x.grad(k.phi)(x) - eps||x||^2 = sum psi^T H psi``, written through the
    Euler identity as ``sum_a w_a k_a x^a - eps||x||^2``.
    """

    mode: str
    eps: float
    coef_map: CoefficientMap
    quad: np.ndarray
    weights: np.ndarray
    families: tuple[str, ...]
    offsets: list[np.ndarray] = field(default_factory=list)

    @property
    def psd_blocks(self) -> list[tuple[str, int, int]]:
        """``(family, cluster index, size)`` for each PSD block."""
        return [(f, i, n) for f in self.families for i, n in enumerate(self.coef_map.sizes)]

    @property
    def n_gram_vars(self) -> int:
        return self.coef_map.n_gram * len(self.families)

    @property
    def n_equalities(self) -> int:
        return len(self.quad) * len(self.families)

    def equality_system(self, n_vars: int, k_offset: int, gram_offsets: dict[str, int]):
        """Sparse ``(A, b)`` over a variable vector with ``k`` and the Gram families
        at the given offsets."""
        n_phi = len(self.quad)
        blocks, rhs = [], []
        cmap = self.coef_map.matrix.tocoo()
        for fam in self.families:
            scale = np.ones(n_phi) if fam == "G" else self.weights.astype(float)
            rows = np.concatenate([cmap.row, np.arange(n_phi)])
            cols = np.concatenate([cmap.col + gram_offsets[fam], k_offset + np.arange(n_phi)])
            vals = np.concatenate([cmap.data, -scale])
            blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(n_phi, n_vars)))
            rhs.append(-self.quad)
        return sp.vstack(blocks, format="csr"), np.concatenate(rhs)


def assemble_positivity_constraints(selection: ClusterSelection, eps: float,
                                    mode: str) -> PositivityConstraints:
    if mode not in ("iss", "bounded"):
        raise ValueError(f"positivity constraints apply to 'iss' or 'bounded' mode, not {mode!r}")
    if not eps >= 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    cmap = build_coefficient_map(selection)
    D, quad = positivity_offsets(selection, eps)
    families = ("G", "H") if mode == "iss" else ("G",)
    return PositivityConstraints(mode=mode, eps=eps, coef_map=cmap, quad=quad,
                                 weights=euler_weights(selection.phi), families=families,
                                 offsets=D)


@dataclass
class CertificateReport:
    gram_min_eig: list[float]
    gram_match_residual: float
    sample_margin: float
    h_min_eig: list[float] | None = None
    h_match_residual: float | None = None
    sample_margin_iss: float | None = None
    M_min_eig: float | None = None
    C_min_eig: float | None = None
    checks: dict[str, bool] = field(default_factory=dict)
    n_samples: int = 0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, ok in self.checks.items() if not ok]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": dict(self.checks),
            "gram_min_eig": list(self.gram_min_eig),
            "gram_match_residual": self.gram_match_residual,
            "sample_margin": self.sample_margin,
            "h_min_eig": self.h_min_eig,
            "h_match_residual": self.h_match_residual,
            "sample_margin_iss": self.sample_margin_iss,
            "M_min_eig": self.M_min_eig,
            "C_min_eig": self.C_min_eig,
            "n_samples": self.n_samples,
        }


def check_certificate(selection: ClusterSelection, k, grams, eps: float, hgrams=None, *,
                      tol_eig: float = 1e-7, tol: float = 1e-7, n_samples: int = 10_000,
                      seed: int = 42) -> CertificateReport:
    """A-posteriori checks of SOS certificates for ``k . phi``.

    (a) every Gram block has minimum eigenvalue ``>= -tol_eig``; (b) the Gram
    blocks reproduce ``k - eps*quad`` (and ``w*k - eps*quad`` for ``hgrams``)
    to ``tol`` in the max norm; (c) at ``n_samples`` standard-normal points the
    certified inequalities hold to ``tol``.
    """
    k = np.asarray(k, dtype=float)
    phi = selection.phi
    cmap = build_coefficient_map(selection)
    _, quad = positivity_offsets(selection, eps)
    w = euler_weights(phi)

    def min_eigs(blocks):
        return [float(np.linalg.eigvalsh(0.5 * (B + B.T))[0]) for B in blocks]

    g_eigs = min_eigs(grams)
    g_res = float(np.max(np.abs(cmap.apply(grams) - (k - quad)), initial=0.0))
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((selection.r, n_samples))
    sq = np.sum(pts**2, axis=0)
    margin = float(np.min(eval_polynomial(phi, k, pts) - eps * sq))

    report = CertificateReport(gram_min_eig=g_eigs, gram_match_residual=g_res,
                               sample_margin=margin, n_samples=n_samples)
    report.checks["gram_psd"] = min(g_eigs) >= -tol_eig
    report.checks["gram_match"] = g_res <= tol
    report.checks["sampled_positivity"] = margin >= -tol
    if hgrams is not None:
        h_eigs = min_eigs(hgrams)
        h_res = float(np.max(np.abs(cmap.apply(hgrams) - (w * k - quad)), initial=0.0))
        xgrad = np.sum(pts * eval_gradient(phi, k, pts), axis=0)
        report.h_min_eig = h_eigs
        report.h_match_residual = h_res
        report.sample_margin_iss = float(np.min(xgrad - eps * sq))
        report.checks["h_psd"] = min(h_eigs) >= -tol_eig
        report.checks["h_match"] = h_res <= tol
        report.checks["sampled_euler"] = report.sample_margin_iss >= -tol
    return report


def verify_certificate(model, tol_eig: float = 1e-7, n_samples: int = 10_000,
                       tol: float = 1e-7, seed: int = 42) -> CertificateReport:
    """Check the stability certificates carried by an inferred model.

    Besides the SOS checks of :func:`check_certificate` this verifies the
    definiteness floors ``M >= delta_M I`` and ``C >= delta_C I`` (iss) or
    ``C >= 0`` (bounded), each to ``tol_eig``.
    """
    hp = model.hyperparams
    report = check_certificate(model.selection, model.k, model.grams, hp["eps"],
                               model.hgrams if model.mode == "iss" else None,
                               tol_eig=tol_eig, tol=tol, n_samples=n_samples, seed=seed)
    report.M_min_eig = float(np.linalg.eigvalsh(model.M)[0])
    report.C_min_eig = float(np.linalg.eigvalsh(model.C)[0])
    c_floor = hp["delta_C"] if model.mode == "iss" else 0.0
    report.checks["M_floor"] = report.M_min_eig >= hp["delta_M"] - tol_eig
    report.checks["C_floor"] = report.C_min_eig >= c_floor - tol_eig
    report.checks["M_symmetric"] = bool(np.allclose(model.M, model.M.T, rtol=0, atol=1e-12))
    report.checks["C_symmetric"] = bool(np.allclose(model.C, model.C.T, rtol=0, atol=1e-12))
    return report


def sos_value(selection: ClusterSelection, grams, x) -> np.ndarray:
    """``sum_i psi_i(x)^T G_i psi_i(x)`` evaluated directly (for cross-checks)."""
    total = 0.0
    for psi, G in zip(selection.psi_bases, grams):
        p = eval_basis(psi, x)
        total = total + np.einsum("i...,ij,j...->...", p, G, p)
    return total

"""Monomial bases in ``r`` variables: construction, evaluation and derivatives.

A monomial is stored as its exponent multi-index, a tuple of ``r`` non-negative
integers. Bases are kept in graded order: ascending total degree, and within a
degree the exponent tuples are sorted in *descending* lexicographic order, so
that ``x1**2`` precedes ``x1*x2`` precedes ``x2**2``. The ordering makes every
basis serialize to a unique text form.

Variable indices are 0-based throughout the Python API.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

MAX_EXPONENT = 31


class InvalidDegreeError(ValueError):
    pass


class InvalidDimensionError(ValueError):
    pass


class InvalidClusterError(ValueError):
    pass


def _order_key(alpha: tuple[int, ...]) -> tuple:
    return (sum(alpha), tuple(-a for a in alpha))


def _check_degree(d: int, *, minimum: int = 2) -> None:
    if int(d) != d or d < minimum or d % 2:
        raise InvalidDegreeError(f"degree must be an even integer >= {minimum}, got {d!r}")


def _check_dimension(r: int) -> None:
    if int(r) != r or r < 1:
        raise InvalidDimensionError(f"number of variables must be >= 1, got {r!r}")


def _compositions(n_vars: int, degree: int):
    """All exponent tuples of length ``n_vars`` summing to ``degree``."""
    # stars and bars
    for bars in itertools.combinations(range(degree + n_vars - 1), n_vars - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(degree + n_vars - 2 - prev)
        yield tuple(out)


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered, duplicate-free set of monomials in ``r`` variables."""

    r: int
    entries: tuple[tuple[int, ...], ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)
    _exponents: np.ndarray = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        _check_dimension(self.r)
        uniq = {tuple(int(a) for a in alpha) for alpha in self.entries}
        for alpha in uniq:
            if len(alpha) != self.r:
                raise InvalidDimensionError(
                    f"multi-index {alpha} does not have length r={self.r}")
            if min(alpha) < 0 or max(alpha) > MAX_EXPONENT:
                raise InvalidDegreeError(
                    f"exponents must lie in [0, {MAX_EXPONENT}], got {alpha}")
        ordered = tuple(sorted(uniq, key=_order_key))
        object.__setattr__(self, "entries", ordered)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(ordered)})
        exps = np.array(ordered, dtype=np.int64).reshape(len(ordered), self.r)
        exps.setflags(write=False)
        object.__setattr__(self, "_exponents", exps)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self._index

    def index(self, alpha: Sequence[int]) -> int:
        return self._index[tuple(alpha)]

    @property
    def exponents(self) -> np.ndarray:
        """Read-only ``(len(basis), r)`` integer array of exponents."""
        return self._exponents

    @property
    def degrees(self) -> np.ndarray:
        return self._exponents.sum(axis=1)

    def union(self, other: "MonomialBasis") -> "MonomialBasis":
        if other.r != self.r:
            raise InvalidDimensionError("cannot merge bases over different variable counts")
        return MonomialBasis(self.r, self.entries + other.entries)

    def to_text(self) -> str:
        """One monomial per line, exponents separated by single spaces."""
        return "".join(" ".join(str(a) for a in alpha) + "\n" for alpha in self.entries)

    @classmethod
    def from_text(cls, text: str, r: int | None = None) -> "MonomialBasis":
        rows = [tuple(int(tok) for tok in line.split()) for line in text.splitlines()
                if line.strip()]
        if r is None:
            if not rows:
                raise InvalidDimensionError("cannot infer r from an empty basis listing")
            r = len(rows[0])
        return cls(r, tuple(rows))

    def is_model_basis(self, d: int | None = None) -> bool:
        """True if every entry has degree in ``[2, d]``."""
        degs = self.degrees
        if len(degs) == 0:
            return True
        hi = degs.max() if d is None else d
        return bool(degs.min() >= 2 and degs.max() <= hi)


def monomials_in(variables: Iterable[int], r: int, lo: int, hi: int) -> MonomialBasis:
    """All monomials of degree ``lo..hi`` supported on the given variables."""
    variables = sorted(set(int(v) for v in variables))
    entries = []
    for deg in range(lo, hi + 1):
        for local in _compositions(len(variables), deg):
            alpha = [0] * r
            for v, a in zip(variables, local):
                alpha[v] = a
            entries.append(tuple(alpha))
    return MonomialBasis(r, tuple(entries))


def count_full(r: int, d: int) -> int:
    """Number of monomials of degree 2..d in r variables, ``C(r+d, d) - r - 1``."""
    _check_dimension(r)
    _check_degree(d)
    return comb(r + d, d) - r - 1


def full_basis(r: int, d: int) -> MonomialBasis:
    """All monomials of degree 2..d in r variables (no constant, no linear terms)."""
    _check_dimension(r)
    _check_degree(d)
    return monomials_in(range(r), r, 2, d)


def sos_factor_basis(variables: Sequence[int], d: int, r: int | None = None) -> MonomialBasis:
    """Factor basis for a square of degree ``d``: monomials of degree 1..d/2 in ``variables``.

    The constant monomial is left out so that every square vanishes at the
    origin and contributes no linear terms.
    """
    variables = tuple(variables)
    if not variables:
        raise InvalidClusterError("cluster must contain at least one variable")
    if len(set(variables)) != len(variables) or min(variables) < 0:
        raise InvalidClusterError(f"cluster indices must be distinct and >= 0: {variables}")
    _check_degree(d)
    if r is None:
        r = max(variables) + 1
    elif max(variables) >= r:
        raise InvalidClusterError(f"cluster {variables} out of range for r={r}")
    return monomials_in(variables, r, 1, d // 2)


def _as_points(basis: MonomialBasis, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[:, None] if single else x
    if pts.ndim != 2 or pts.shape[0] != basis.r:
        raise InvalidDimensionError(
            f"expected points with leading dimension r={basis.r}, got shape {x.shape}")
    return pts, single


def _power_table(pts: np.ndarray, max_exp: int) -> np.ndarray:
    # table[p, i, n] = pts[i, n] ** p, built by repeated multiplication
    table = np.empty((max_exp + 1,) + pts.shape)
    table[0] = 1.0
    for p in range(1, max_exp + 1):
        table[p] = table[p - 1] * pts
    return table


def _monomial_values(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    if exps.shape[0] == 0:
        return np.zeros((0, pts.shape[1]))
    table = _power_table(pts, int(exps.max(initial=0)))
    rows = np.arange(exps.shape[1])
    # (n_mono, r, N) gathered powers, multiplied over the variable axis
    return table[exps, rows[None, :], :].prod(axis=1)


def eval_basis(basis: MonomialBasis, x) -> np.ndarray:
    """Evaluate every monomial of ``basis`` at ``x``.

    ``x`` is a length-``r`` vector or an ``(r, N)`` array of points; the result
    is ``(len(basis),)`` or ``(len(basis), N)`` accordingly.
    """
    pts, single = _as_points(basis, x)
    vals = _monomial_values(basis.exponents, pts)
    return vals[:, 0] if single else vals


def basis_jacobian(basis: MonomialBasis, x) -> np.ndarray:
    """Jacobian of the monomial vector: entry ``(j, a)`` is d(x**alpha_a)/dx_j.

    Returns an ``(r, len(basis))`` array for a single point, or
    ``(N, r, len(basis))`` for an ``(r, N)`` batch.
    """
    pts, single = _as_points(basis, x)
    exps = basis.exponents
    n, r = exps.shape
    out = np.zeros((pts.shape[1], r, n))
    for j in range(r):
        mask = exps[:, j] > 0
        if not mask.any():
            continue
        lowered = exps[mask].copy()
        lowered[:, j] -= 1
        out[:, j, mask] = (exps[mask, j][:, None] * _monomial_values(lowered, pts)).T
    return out[0] if single else out


def eval_polynomial(basis: MonomialBasis, k, x) -> np.ndarray | float:
    k = np.asarray(k, dtype=float)
    if k.shape != (len(basis),):
        raise InvalidDimensionError(f"coefficient vector must have length {len(basis)}")
    return k @ eval_basis(basis, x)


def eval_gradient(basis: MonomialBasis, k, x) -> np.ndarray:
    """Gradient of the polynomial ``k . phi(x)``; shape ``(r,)`` or ``(r, N)``."""
    k = np.asarray(k, dtype=float)
    if k.shape != (len(basis),):
        raise InvalidDimensionError(f"coefficient vector must have length {len(basis)}")
    jac = basis_jacobian(basis, x)
    if jac.ndim == 2:
        return jac @ k
    return (jac @ k).T


def euler_weights(basis: MonomialBasis) -> np.ndarray:
    """Total degree of each monomial.

    For a homogeneous monomial ``x . grad(x**alpha) = |alpha| x**alpha``, so
    ``x . grad(k . phi) = sum_j w_j k_j phi_j``.
    """
    return basis.degrees.copy()


class PolynomialGradient:
    """Precompiled gradient (and Hessian) of a fixed polynomial ``k . phi``.

    Used by the time integrators, where the same polynomial is differentiated
    at many points. Derivative monomials are deduplicated once up front so that
    each evaluation is one gather-product plus a small matrix product.
    """

    def __init__(self, basis: MonomialBasis, k):
        k = np.asarray(k, dtype=float)
        if k.shape != (len(basis),):
            raise InvalidDimensionError(f"coefficient vector must have length {len(basis)}")
        self.r = basis.r
        exps = basis.exponents
        lowered: dict[tuple[int, ...], int] = {}
        rows, cols, vals = [], [], []
        for a, alpha in enumerate(exps):
            if k[a] == 0.0:
                continue
            for j in range(self.r):
                if alpha[j] == 0:
                    continue
                beta = alpha.copy()
                beta[j] -= 1
                col = lowered.setdefault(tuple(beta), len(lowered))
                rows.append(j)
                cols.append(col)
                vals.append(alpha[j] * k[a])
        self._exps = np.array(list(lowered), dtype=np.int64).reshape(len(lowered), self.r)
        coef = np.zeros((self.r, len(lowered)))
        np.add.at(coef, (rows, cols), vals)
        self._coef = coef
        self._hess_terms = self._build_hessian(k, exps)

    def _build_hessian(self, k, exps):
        terms = []
        for a, alpha in enumerate(exps):
            if k[a] == 0.0:
                continue
            for i in range(self.r):
                for j in range(self.r):
                    beta = alpha.copy()
                    if i == j:
                        c = alpha[i] * (alpha[i] - 1)
                        beta[i] -= 2
                    else:
                        c = alpha[i] * alpha[j]
                        beta[i] -= 1
                        beta[j] -= 1
                    if c:
                        terms.append((i, j, c * k[a], beta))
        if not terms:
            return None
        idx = np.array([(i, j) for i, j, _, _ in terms], dtype=np.int64)
        coefs = np.array([c for _, _, c, _ in terms])
        betas = np.array([b for _, _, _, b in terms], dtype=np.int64)
        return idx, coefs, betas

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Gradient at ``x`` of shape ``(r,)`` or ``(r, N)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[:, None] if single else x
        if self._exps.shape[0] == 0:
            g = np.zeros_like(pts)
        else:
            g = self._coef @ _monomial_values(self._exps, pts)
        return g[:, 0] if single else g

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = np.zeros((self.r, self.r))
        if self._hess_terms is None:
            return h
        idx, coefs, betas = self._hess_terms
        vals = coefs * _monomial_values(betas, x[:, None])[:, 0]
        np.add.at(h, (idx[:, 0], idx[:, 1]), vals)
        return h

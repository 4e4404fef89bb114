"""Greedy cluster selection for a sparse, SOS-compatible monomial basis.

Each cluster is a set of ``theta`` distinct variables. A cluster admits every
monomial of degree 2..d supported on its variables, which is exactly the set of
monomials that can appear in the square of a polynomial of degree d/2 in those
variables. Clusters are ranked by the product of the relative POD energies of
their variables.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from .monomials import (InvalidClusterError, InvalidDegreeError, MonomialBasis,
                        _check_degree, monomials_in, sos_factor_basis)

log = logging.getLogger(__name__)

Cluster = tuple[int, ...]


class DegenerateSpectrumError(ValueError):
    pass


class BudgetBelowCoverageWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ClusterSelection:
    r: int
    d: int
    theta: int
    clusters: tuple[Cluster, ...]
    psi_bases: tuple[MonomialBasis, ...]
    phi: MonomialBasis
    budget: int | None = None

    @property
    def n_phi(self) -> int:
        return len(self.phi)

    @property
    def is_dense(self) -> bool:
        return self.theta == self.r

    def cover_counts(self) -> np.ndarray:
        """Number of clusters containing each variable."""
        counts = np.zeros(self.r, dtype=int)
        for c in self.clusters:
            counts[list(c)] += 1
        return counts

    def to_dict(self) -> dict:
        return {"r": self.r, "d": self.d, "theta": self.theta, "budget": self.budget,
                "clusters": [list(c) for c in self.clusters]}

    @classmethod
    def from_clusters(cls, r: int, d: int, clusters: Sequence[Sequence[int]],
                      theta: int | None = None, budget: int | None = None) -> "ClusterSelection":
        """Rebuild a selection (bases and phi) from its cluster list."""
        _check_degree(d)
        clusters = tuple(tuple(sorted(int(v) for v in c)) for c in clusters)
        if not clusters:
            raise InvalidClusterError("selection needs at least one cluster")
        if theta is None:
            theta = len(clusters[0])
        for c in clusters:
            if len(c) != theta or len(set(c)) != theta:
                raise InvalidClusterError(f"cluster {c} is not a set of {theta} distinct variables")
            if c[0] < 0 or c[-1] >= r:
                raise InvalidClusterError(f"cluster {c} out of range for r={r}")
        phi = MonomialBasis(r, ())
        for c in clusters:
            phi = phi.union(monomials_in(c, r, 2, d))
        psi = tuple(sos_factor_basis(c, d, r) for c in clusters)
        return cls(r=r, d=d, theta=theta, clusters=clusters, psi_bases=psi, phi=phi,
                   budget=budget)


def relative_energies(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("singular values must be nonnegative")
    total = float(np.sum(sigma**2))
    if total == 0.0:
        raise DegenerateSpectrumError("all singular values are zero")
    return sigma**2 / total


def importance(sigma, cluster: Sequence[int]) -> float:
    """Relative dominance of a cluster: product of ``sigma_i**2 / sum(sigma**2)``.

    The normalizer runs over the whole spectrum passed in.
    """
    energy = relative_energies(sigma)
    cluster = tuple(cluster)
    if max(cluster) >= energy.size:
        raise InvalidClusterError(f"cluster {cluster} exceeds spectrum length {energy.size}")
    return float(np.prod(energy[list(cluster)]))


def sparse_upper_bound(n_chi: int, theta: int, d: int) -> int:
    """``n_chi * (C(theta+d, d) - theta - 1)``; exact only for disjoint clusters."""
    return n_chi * (comb(theta + d, d) - theta - 1)


def select_clusters(sigma, r: int, theta: int, d: int,
                    budget: int | None = None) -> ClusterSelection:
    """Two-stage greedy cluster selection.

    Stage 1 repeatedly picks, among clusters that contain at least one
    not-yet-covered variable, the one with the largest importance, until every
    variable is covered. Stage 2 (only when ``budget`` is given) keeps adding the
    most important unselected clusters while the basis has fewer than ``budget``
    monomials. Ties go to the lexicographically smallest index tuple.

    ``theta == r`` gives the dense basis.
    """
    _check_degree(d)
    if not 1 <= theta <= r:
        raise InvalidClusterError(f"cluster size must satisfy 1 <= theta <= r={r}, got {theta}")
    energy = relative_energies(sigma)
    if energy.size < r:
        raise ValueError(f"need at least r={r} singular values, got {energy.size}")

    candidates = list(itertools.combinations(range(r), theta))
    scores = {c: float(np.prod(energy[list(c)])) for c in candidates}
    ranked = sorted(candidates, key=lambda c: (-scores[c], c))

    chosen: list[Cluster] = []
    phi = MonomialBasis(r, ())
    uncovered = set(range(r))
    while uncovered:
        pick = next(c for c in ranked if uncovered.intersection(c) and c not in chosen)
        chosen.append(pick)
        phi = phi.union(monomials_in(pick, r, 2, d))
        uncovered.difference_update(pick)

    if budget is not None:
        if len(phi) > budget:
            warnings.warn(
                f"coverage already needs {len(phi)} monomials, above the budget of {budget}",
                BudgetBelowCoverageWarning, stacklevel=2)
        for c in ranked:
            if len(phi) >= budget:
                break
            if c in chosen:
                continue
            chosen.append(c)
            phi = phi.union(monomials_in(c, r, 2, d))

    log.debug("selected clusters %s (%d monomials)", chosen, len(phi))
    return ClusterSelection(r=r, d=d, theta=theta, clusters=tuple(chosen),
                            psi_bases=tuple(sos_factor_basis(c, d, r) for c in chosen),
                            phi=phi, budget=budget)


def dense_selection(r: int, d: int) -> ClusterSelection:
    """Single cluster over all variables, i.e. the full basis."""
    return ClusterSelection.from_clusters(r, d, [tuple(range(r))], theta=r)


__all__ = ["Cluster", "ClusterSelection", "DegenerateSpectrumError", "InvalidClusterError",
           "InvalidDegreeError", "BudgetBelowCoverageWarning", "dense_selection",
           "importance", "select_clusters", "sparse_upper_bound"]

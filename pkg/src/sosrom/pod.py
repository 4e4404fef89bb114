"""POD basis, projection of snapshot data and finite-difference derivatives."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg as la


@dataclass
class SnapshotSet:
    """Displacement and input snapshots on a uniform time grid.

    Parameters
    ----------
    times : (N,) ndarray
        Strictly increasing, uniformly spaced sample times.
    Y : (n, N) ndarray
        Displacement snapshots, one column per time.
    U : (n_u, N) ndarray
        Input snapshots.
    Ydot, Yddot : (n, N) ndarray, optional
        Velocity and acceleration snapshots if the simulator provides them.
        When present they are projected instead of finite-differenced.
    """

    times: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    Ydot: np.ndarray | None = None
    Yddot: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        N = self.times.size
        if N < 5:
            raise ValueError(f"need at least 5 snapshots, got {N}")
        if self.Y.shape[1] != N or self.U.shape[1] != N:
            raise ValueError(
                f"snapshot matrices must have {N} columns, got Y{self.Y.shape}, U{self.U.shape}")
        for name in ("Ydot", "Yddot"):
            val = getattr(self, name)
            if val is not None:
                val = np.atleast_2d(np.asarray(val, dtype=float))
                if val.shape != self.Y.shape:
                    raise ValueError(f"{name} must have the shape of Y")
                setattr(self, name, val)
        self.dt  # validates the grid

    @property
    def dt(self) -> float:
        return uniform_step(self.times)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    def truncate(self, n_keep: int) -> "SnapshotSet":
        """The first ``n_keep`` snapshots."""
        cut = slice(0, n_keep)
        return SnapshotSet(
            self.times[cut], self.Y[:, cut], self.U[:, cut],
            None if self.Ydot is None else self.Ydot[:, cut],
            None if self.Yddot is None else self.Yddot[:, cut])


@dataclass
class ReducedDataset:
    """Reduced snapshot matrices ready for operator inference.

    ``X``, ``Xdot``, ``Xddot`` and ``U`` may be the concatenation of several
    snapshot sets; ``segments`` records the column ranges of each.
    """

    V: np.ndarray
    sigma: np.ndarray
    X: np.ndarray
    Xdot: np.ndarray
    Xddot: np.ndarray
    U: np.ndarray
    dt: float
    sigma_full: np.ndarray | None = None
    segments: list[tuple[int, int]] = field(default_factory=list)

    @property
    def r(self) -> int:
        return self.X.shape[0]

    @property
    def n_u(self) -> int:
        return self.U.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.Xdot, self.Xddot, self.U):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()


def uniform_step(times: np.ndarray, rtol: float = 1e-9) -> float:
    """Common step of a uniform grid; raises on non-uniform or unsorted grids."""
    times = np.asarray(times, dtype=float)
    steps = np.diff(times)
    if steps.size == 0 or np.any(steps <= 0):
        raise ValueError("times must be strictly increasing")
    dt = (times[-1] - times[0]) / (times.size - 1)
    if np.max(np.abs(steps - dt)) > rtol * max(abs(dt), abs(times).max()):
        raise ValueError("time grid is not uniform")
    return float(dt)


def compute_basis(Y, r: int, center: bool = False):
    """Leading ``r`` left singular vectors of the snapshot matrix.

    Parameters
    ----------
    Y : (n, N) ndarray
        Snapshot matrix.
    r : int
        Basis size, ``1 <= r <= min(n, N)``.
    center : bool
        Subtract the temporal mean before the SVD (off by default; the
        structural problems here have a zero equilibrium).

    Returns
    -------
    V : (n, r) ndarray
        Orthonormal basis. Each column is signed so that its largest-magnitude
        entry is positive.
    sigma_full : (min(n, N),) ndarray
        The full singular value spectrum, nonincreasing.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if not np.all(np.isfinite(Y)):
        raise ValueError("snapshot matrix contains non-finite values")
    n, N = Y.shape
    if not 1 <= r <= min(n, N):
        raise ValueError(f"r must lie in [1, {min(n, N)}], got {r}")
    if center:
        Y = Y - Y.mean(axis=1, keepdims=True)
    U, s, _ = la.svd(Y, full_matrices=False)
    V = U[:, :r].copy()
    pivots = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivots, np.arange(r)])
    signs[signs == 0] = 1.0
    V *= signs
    return V, s


def finite_diff(X, dt: float):
    """Second-order accurate first and second time derivatives along axis 1.

    Central stencils at interior columns, one-sided second-order stencils at the
    two ends. Exact for polynomials of degree <= 2 in time.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[1]
    if N < 5:
        raise ValueError(f"need at least 5 samples for finite differences, got {N}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    Xd = np.empty_like(X)
    Xdd = np.empty_like(X)
    Xd[:, 1:-1] = (X[:, 2:] - X[:, :-2]) / (2 * dt)
    Xd[:, 0] = (-3 * X[:, 0] + 4 * X[:, 1] - X[:, 2]) / (2 * dt)
    Xd[:, -1] = (3 * X[:, -1] - 4 * X[:, -2] + X[:, -3]) / (2 * dt)
    Xdd[:, 1:-1] = (X[:, 2:] - 2 * X[:, 1:-1] + X[:, :-2]) / dt**2
    Xdd[:, 0] = (2 * X[:, 0] - 5 * X[:, 1] + 4 * X[:, 2] - X[:, 3]) / dt**2
    Xdd[:, -1] = (2 * X[:, -1] - 5 * X[:, -2] + 4 * X[:, -3] - X[:, -4]) / dt**2
    return Xd, Xdd


def reduce(snapshots: SnapshotSet | Sequence[SnapshotSet], V, sigma) -> ReducedDataset:
    """Project snapshots onto ``V`` and estimate reduced velocities/accelerations.

    Several snapshot sets are concatenated column-wise after differencing each
    one separately, so no stencil straddles two sets.
    """
    sets = [snapshots] if isinstance(snapshots, SnapshotSet) else list(snapshots)
    if not sets:
        raise ValueError("no snapshot sets given")
    V = np.asarray(V, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r = V.shape[1]
    if sigma.size < r:
        raise ValueError("need at least r singular values")
    n_u = sets[0].U.shape[0]
    dt = sets[0].dt
    parts, segments, start = [], [], 0
    for s in sets:
        if s.n != V.shape[0]:
            raise ValueError(f"basis has {V.shape[0]} rows but snapshots have {s.n}")
        if s.U.shape[0] != n_u:
            raise ValueError("all snapshot sets must share the input dimension")
        if not np.isclose(s.dt, dt, rtol=1e-9):
            raise ValueError("all snapshot sets must share the time step")
        X = V.T @ s.Y
        Xd, Xdd = finite_diff(X, dt)
        if s.Ydot is not None:
            Xd = V.T @ s.Ydot
        if s.Yddot is not None:
            Xdd = V.T @ s.Yddot
        parts.append((X, Xd, Xdd, s.U))
        segments.append((start, start + X.shape[1]))
        start += X.shape[1]
    X, Xd, Xdd, U = (np.hstack(cols) for cols in zip(*parts))
    return ReducedDataset(V=V, sigma=sigma[:r].copy(), X=X, Xdot=Xd, Xddot=Xdd, U=U,
                          dt=dt, sigma_full=sigma.copy(), segments=segments)

"""Nonlinear mass-spring chains used as full-order data generators.

Node 0 is clamped; nodes 1..N-1 carry the displacement ``y`` (``n = N - 1``
degrees of freedom). Spring ``j`` joins nodes ``j-1`` and ``j`` and has
elongation ``delta_j = y_j - y_{j-1}``. The semi-discrete system is

    M_y y'' + C_y y' + f_y(y) = B_y u,   f_y(y) = D^T f(D y)

with ``D`` the difference matrix, ``M_y = m I``, Rayleigh damping
``C_y = alpha M_y + beta K_1`` and the force applied at ``input_node``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pod import SnapshotSet


class FomDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainModel:
    n_nodes: int = 30
    mass: float = 1.0
    law: str = "duffing"
    k1: float = 1.0
    k3: float = 0.5
    a: float = 1.0
    alpha: float = 0.01
    beta: float = 0.01
    input_node: int = -1

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("a chain needs at least 2 nodes")
        if self.mass <= 0 or self.k1 <= 0:
            raise ValueError("mass and k1 must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("Rayleigh coefficients must be nonnegative")
        if self.law not in ("duffing", "sinh"):
            raise ValueError(f"unknown spring law {self.law!r}")
        if self.law == "sinh" and self.a <= 0:
            raise ValueError("sinh law needs a > 0")
        if not -self.n_dof <= self.input_node < self.n_dof:
            raise ValueError(f"input node {self.input_node} out of range")

    @property
    def n_dof(self) -> int:
        return self.n_nodes - 1

    def spring_force(self, delta):
        if self.law == "duffing":
            return self.k1 * delta + self.k3 * delta**3
        return self.k1 / self.a * np.sinh(self.a * delta)

    def spring_potential(self, delta):
        if self.law == "duffing":
            return 0.5 * self.k1 * delta**2 + 0.25 * self.k3 * delta**4
        return self.k1 / self.a**2 * (np.cosh(self.a * delta) - 1.0)


@dataclass
class ChainOperators:
    M: np.ndarray
    C: np.ndarray
    K1: np.ndarray
    B: np.ndarray
    D: np.ndarray
    k3: float | None = None

    @property
    def has_cubic(self) -> bool:
        return self.k3 is not None


def difference_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.eye(n, k=-1)


def assemble_chain_operators(chain: ChainModel) -> ChainOperators:
    """Explicit matrices of the semi-discrete chain.

    For the duffing law ``f_y(y) = K1 y + k3 D^T (D y)**3``. The sinh law has no
    finite polynomial part beyond ``K1`` and reports ``k3=None``.
    """
    n = chain.n_dof
    D = difference_matrix(n)
    K1 = chain.k1 * D.T @ D
    M = chain.mass * np.eye(n)
    C = chain.alpha * M + chain.beta * K1
    B = np.zeros((n, 1))
    B[chain.input_node, 0] = 1.0
    k3 = chain.k3 if chain.law == "duffing" else None
    return ChainOperators(M=M, C=C, K1=K1, B=B, D=D, k3=k3)


def internal_force(chain: ChainModel, y):
    """``f_y(y)`` for ``y`` of shape ``(n,)`` or ``(n, N)``."""
    y = np.asarray(y, dtype=float)
    delta = np.diff(y, axis=0, prepend=0.0)
    f = chain.spring_force(delta)
    out = f.copy()
    out[:-1] -= f[1:]
    return out


def potential_energy(chain: ChainModel, y):
    delta = np.diff(np.asarray(y, dtype=float), axis=0, prepend=0.0)
    return np.sum(chain.spring_potential(delta), axis=0)


def mechanical_energy(chain: ChainModel, y, v):
    return 0.5 * chain.mass * np.sum(np.asarray(v) ** 2, axis=0) + potential_energy(chain, y)


def input_profile(kind: str, t, amplitude: float | None = None, omega: float | None = None):
    """Scalar load profiles.

    ``inference``   ``4 sin(0.2 pi t)``
    ``validation``  ``2.5 sin((0.1 + 0.1 cos t) t)``
    ``custom``      ``amplitude * sin(omega t)``
    ``zero``        identically zero
    """
    t = np.asarray(t, dtype=float)
    if kind == "inference":
        return 4.0 * np.sin(0.2 * math.pi * t)
    if kind == "validation":
        return 2.5 * np.sin((0.1 + 0.1 * np.cos(t)) * t)
    if kind == "custom":
        if amplitude is None or omega is None:
            raise ValueError("custom profile needs amplitude and omega")
        return amplitude * np.sin(omega * t)
    if kind == "zero":
        return np.zeros_like(t)
    raise ValueError(f"unknown profile {kind!r}")


def simulate_fom(chain: ChainModel, profile, T: float = 20.0, n_snap: int = 200,
                 dt_int: float = 1e-3, record_derivatives: bool = False,
                 blowup: float = 1e12) -> SnapshotSet:
    """Integrate the chain from rest with classical RK4 and sample snapshots.

    Snapshots are taken at ``t_i = i * T / n_snap`` for ``i = 0..n_snap-1``;
    ``dt_int`` must divide the snapshot interval. ``profile`` is a callable of
    time returning the scalar load (or a profile name understood by
    :func:`input_profile`).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if callable(profile):
        load = profile
    else:
        name = profile
        load = lambda t: input_profile(name, t)  # noqa: E731
    interval = T / n_snap
    ratio = interval / dt_int
    steps_per = int(round(ratio))
    if steps_per < 1 or abs(ratio - steps_per) > 1e-9 * ratio:
        raise ValueError(f"dt_int={dt_int} does not divide the snapshot interval {interval}")
    h = interval / steps_per

    ops = assemble_chain_operators(chain)
    n = chain.n_dof
    b = ops.B[:, 0]
    Cy = ops.C
    minv = 1.0 / chain.mass
    f = chain.spring_force
    delta = np.empty(n)

    def accel(y, v, u):
        delta[0] = y[0]
        np.subtract(y[1:], y[:-1], out=delta[1:])
        fs = f(delta)
        out = b * u - Cy @ v - fs
        out[:-1] += fs[1:]
        return minv * out

    times = interval * np.arange(n_snap)
    # loads at every half step of the integration grid, evaluated in one call
    half = 0.5 * h * np.arange(2 * steps_per * (n_snap - 1) + 1)
    loads = np.asarray(load(half), dtype=float) * np.ones_like(half)
    y = np.zeros(n)
    v = np.zeros(n)
    Y = np.empty((n, n_snap))
    Yd = np.empty((n, n_snap))
    Ydd = np.empty((n, n_snap))
    U = np.empty((1, n_snap))
    for i in range(n_snap):
        u_now = float(load(times[i]))
        Y[:, i], Yd[:, i], U[0, i] = y, v, u_now
        Ydd[:, i] = accel(y, v, u_now)
        if i == n_snap - 1:
            break
        for s in range(steps_per):
            j = 2 * (i * steps_per + s)
            u0, um, u1 = loads[j], loads[j + 1], loads[j + 2]
            k1y, k1v = v, accel(y, v, u0)
            k2y, k2v = v + 0.5 * h * k1v, accel(y + 0.5 * h * k1y, v + 0.5 * h * k1v, um)
            k3y, k3v = v + 0.5 * h * k2v, accel(y + 0.5 * h * k2y, v + 0.5 * h * k2v, um)
            k4y, k4v = v + h * k3v, accel(y + h * k3y, v + h * k3v, u1)
            y = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
            v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(y)) and np.max(np.abs(y)) < blowup):
            raise FomDivergedError(f"chain simulation diverged near t={times[i + 1]:.4g}")
    if record_derivatives:
        return SnapshotSet(times, Y, U, Yd, Ydd)
    return SnapshotSet(times, Y, U)

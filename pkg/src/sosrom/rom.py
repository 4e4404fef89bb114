"""Time integration of inferred ROMs, Lyapunov diagnostics and error metrics."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as la

DIVERGENCE_THRESHOLD = 1e12


class SingularMassError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass
class Trajectory:
    """States on the simulation grid; ``X`` and ``Xdot`` are ``(r, N)`` or ``(r, B, N)``.

    After divergence the remaining samples are NaN and ``last_valid`` holds the
    index of the last finite sample.
    """

    times: np.ndarray
    X: np.ndarray
    Xdot: np.ndarray
    diverged: bool = False
    last_valid: int = -1
    t_sim: float = 0.0

    @property
    def Z(self) -> np.ndarray:
        """Full state ``(x, x')`` stacked along the first axis."""
        return np.concatenate([self.X, self.Xdot], axis=0)


@dataclass
class ErrorReport:
    err: float
    ref_norms: np.ndarray = field(repr=False)
    err_norms: np.ndarray = field(repr=False)
    t_sim: float = 0.0


def _mass_factor(M):
    try:
        cho = la.cho_factor(M)
        la.cho_solve(cho, np.zeros(M.shape[0]))
        return lambda rhs: la.cho_solve(cho, rhs, check_finite=False)
    except la.LinAlgError:
        pass
    try:
        with warnings.catch_warnings():
            # singularity is detected below and raised as SingularMassError
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu = la.lu_factor(M, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise SingularMassError("mass matrix is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.abs(M).max()):
        raise SingularMassError("mass matrix is singular")
    return lambda rhs: la.lu_solve(lu, rhs, check_finite=False)


def _input_stages(u_samples, substeps: int):
    """Inputs at the start, midpoint and end of every integration sub-step."""
    U = np.atleast_2d(np.asarray(u_samples, dtype=float))
    N = U.shape[1]
    fine = np.linspace(0.0, N - 1.0, (N - 1) * 2 * substeps + 1)
    grid = np.arange(N, dtype=float)
    return np.vstack([np.interp(fine, grid, row) for row in U])


def simulate(model, u_samples, dt: float, x0=None, v0=None, integrator: str = "rk4",
             substeps: int = 1, t0: float = 0.0,
             blowup: float = DIVERGENCE_THRESHOLD) -> Trajectory:
    """Integrate ``M x'' + C x' + grad(k.phi)(x) = B u`` on a uniform grid.

    Parameters
    ----------
    model : RomModel
        Anything with ``M, C, B`` arrays and a ``gradient(x)`` method (plus
        ``stiffness_hessian(x)`` for the implicit integrator).
    u_samples : (n_u, N) array
        Input at the output times ``t0 + i*dt``; linearly interpolated in between.
    dt : float
        Output spacing. Each interval is split into ``substeps`` integration steps.
    x0, v0 : (r,) or (r, B) array, optional
        Initial displacement and velocity, zero by default. A 2-D array
        integrates ``B`` initial conditions at once (rk4 only vectorizes).
    integrator : {"rk4", "implicit_midpoint"}
    """
    if integrator not in ("rk4", "implicit_midpoint"):
        raise ValueError(f"unknown integrator {integrator!r}")
    r = model.M.shape[0]
    U = np.atleast_2d(np.asarray(u_samples, dtype=float))
    N = U.shape[1]
    x = np.zeros(r) if x0 is None else np.array(x0, dtype=float)
    v = np.zeros_like(x) if v0 is None else np.array(v0, dtype=float)
    if x.shape != v.shape or x.shape[0] != r:
        raise ValueError("initial conditions must have leading dimension r")
    solve_mass = _mass_factor(np.asarray(model.M, dtype=float))
    C, B = model.C, model.B
    h = dt / substeps
    stages = _input_stages(U, substeps)
    batch = x.ndim == 2

    def accel(x, v, u):
        force = (B @ u)[:, None] if batch else B @ u
        return solve_mass(force - C @ v - model.gradient(x))

    X = np.full((r,) + x.shape[1:] + (N,), np.nan)
    Xd = np.full_like(X, np.nan)
    X[..., 0], Xd[..., 0] = x, v
    start = time.perf_counter()
    stepper = _ImplicitMidpoint(model, solve_mass) if integrator == "implicit_midpoint" else None
    with np.errstate(all="ignore"):
        diverged, last = _march(X, Xd, x, v, N, substeps, stages, h, accel, stepper, blowup)
    elapsed = time.perf_counter() - start
    times = t0 + dt * np.arange(N)
    return Trajectory(times, X, Xd, diverged=diverged, last_valid=last, t_sim=elapsed)


def _march(X, Xd, x, v, N, substeps, stages, h, accel, stepper, blowup):
    for i in range(N - 1):
        for s in range(substeps):
            j = 2 * (i * substeps + s)
            u0, um, u1 = stages[:, j], stages[:, j + 1], stages[:, j + 2]
            if stepper is None:
                k1x, k1v = v, accel(x, v, u0)
                k2x, k2v = v + 0.5 * h * k1v, accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v, um)
                k3x, k3v = v + 0.5 * h * k2v, accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v, um)
                k4x, k4v = v + h * k3v, accel(x + h * k3x, v + h * k3v, u1)
                x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
                v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
            else:
                x, v = stepper.step(x, v, um, h)
        z_max = max(np.max(np.abs(x)), np.max(np.abs(v)))
        if not np.isfinite(z_max) or z_max > blowup:
            return True, i
        X[..., i + 1], Xd[..., i + 1] = x, v
    return False, N - 1


class _ImplicitMidpoint:
    """Implicit midpoint rule with a damped Newton solve for the midpoint state."""

    def __init__(self, model, solve_mass, tol: float = 1e-10, max_iter: int = 50):
        self.model = model
        self.solve_mass = solve_mass
        self.tol = tol
        self.max_iter = max_iter
        self.MinvC = solve_mass(model.C)

    def _rhs(self, z, u):
        r = self.model.M.shape[0]
        x, v = z[:r], z[r:]
        a = self.solve_mass(self.model.B @ u - self.model.C @ v - self.model.gradient(x))
        return np.concatenate([v, a])

    def step(self, x, v, u_mid, h):
        if x.ndim == 2:
            out = [self.step(x[:, b], v[:, b], u_mid, h) for b in range(x.shape[1])]
            return np.stack([o[0] for o in out], 1), np.stack([o[1] for o in out], 1)
        r = x.size
        z0 = np.concatenate([x, v])
        m = z0 + 0.5 * h * self._rhs(z0, u_mid)

        def residual(m):
            return m - z0 - 0.5 * h * self._rhs(m, u_mid)

        res = residual(m)
        scale = 1.0 + np.linalg.norm(z0)
        for _ in range(self.max_iter):
            if np.linalg.norm(res) <= self.tol * scale:
                break
            J = np.zeros((2 * r, 2 * r))
            J[:r, r:] = np.eye(r)
            J[r:, :r] = -self.solve_mass(self.model.stiffness_hessian(m[:r]))
            J[r:, r:] = -self.MinvC
            delta = np.linalg.solve(np.eye(2 * r) - 0.5 * h * J, -res)
            lam = 1.0
            norm0 = np.linalg.norm(res)
            while True:
                trial = m + lam * delta
                res_trial = residual(trial)
                if np.linalg.norm(res_trial) < (1 - 0.25 * lam) * norm0 or lam < 1e-4:
                    break
                lam *= 0.5
            m, res = trial, res_trial
        z1 = 2 * m - z0
        return z1[:r], z1[r:]


def lyapunov_V(model, x, v):
    """``0.5 v^T M v + k.phi(x)``; vectorized over trailing point axes."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    kinetic = 0.5 * np.einsum("i...,ij,j...->...", v, model.M, v)
    if x.ndim > 2:
        return kinetic + np.reshape(model.potential(x.reshape(x.shape[0], -1)), x.shape[1:])
    return kinetic + model.potential(x)


def lyapunov_Vdot(model, x, v):
    """Rate of change of :func:`lyapunov_V` along unforced trajectories, ``-v^T C v``."""
    v = np.asarray(v, dtype=float)
    return -np.einsum("i...,ij,j...->...", v, model.C, v)


def energy_monitor(model, x0, v0, dt: float, n_steps: int, chunk: int = 2000) -> dict:
    """Track ``V`` along unforced rk4 trajectories without storing them.

    Returns the largest one-step increase of ``V`` relative to ``V(t0)`` for
    each initial condition, the final ``V`` and a divergence flag.
    """
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    if x.ndim == 1:
        x, v = x[:, None], v[:, None]
    n_u = model.B.shape[1]
    V0 = lyapunov_V(model, x, v)
    V_prev = V0.copy()
    worst = np.full(V0.shape, -np.inf)
    done = 0
    diverged = np.zeros(V0.shape, dtype=bool)
    while done < n_steps:
        m = min(chunk, n_steps - done)
        traj = simulate(model, np.zeros((n_u, m + 1)), dt, x, v)
        Vs = lyapunov_V(model, traj.X, traj.Xdot)  # (B, m+1)
        Vs = np.concatenate([V_prev[:, None], Vs[:, 1:]], axis=1)
        inc = np.nanmax(np.diff(Vs, axis=1), axis=1) / np.where(V0 > 0, V0, 1.0)
        worst = np.maximum(worst, inc)
        if traj.diverged:
            diverged[:] = True
            break
        x, v = traj.X[..., -1], traj.Xdot[..., -1]
        V_prev = Vs[:, -1]
        done += m
    return {"max_rel_increase": worst, "V0": V0, "V_final": V_prev, "diverged": diverged,
            "steps": done}


def error_metric(Y_ref, V, X_tilde, t_sim: float = 0.0) -> ErrorReport:
    """``sum_i ||y_i - V x_i|| / sum_i ||y_i||`` over snapshot columns."""
    Y_ref = np.atleast_2d(np.asarray(Y_ref, dtype=float))
    X_tilde = np.atleast_2d(np.asarray(X_tilde, dtype=float))
    if Y_ref.shape[1] != X_tilde.shape[1]:
        raise ValueError("reference and reduced trajectories have different sample counts")
    ref = np.linalg.norm(Y_ref, axis=0)
    total = ref.sum()
    if total == 0.0:
        raise UndefinedMetricError("reference snapshots are all zero")
    diff = np.linalg.norm(Y_ref - np.asarray(V) @ X_tilde, axis=0)
    err = float(diff.sum() / total) if np.all(np.isfinite(diff)) else float("inf")
    return ErrorReport(err=err, ref_norms=ref, err_norms=diff, t_sim=t_sim)


def sample_at(trajectory: Trajectory, times) -> np.ndarray:
    """Trajectory displacements at the grid points nearest to ``times``."""
    idx = np.abs(trajectory.times[None, :] - np.asarray(times)[:, None]).argmin(axis=1)
    return trajectory.X[..., idx]

"""Implicit-Euler solvers for the state, linearized and adjoint equations.

Every time step solves a system with matrix ``I + dt*A + dt*diag(c)``,
which is SPD whenever ``c >= 0``; the solves go through the CG kernel of
:mod:`parabolic_ocp._backend`.

The adjoint is the exact transpose of the discrete state scheme
(discretize-then-optimize): with ``phi^{nt+1} = 0``,

    (I + dt*A + dt*f'(y^k)) phi^k = phi^{k+1} - dt*(L_y^k + e^k g_y^k),   k = nt..1,

so the stored ``phi`` pairs with the control on the same level. Level 0
holds ``phi^1``, the discrete multiplier of the initial condition.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .fields import Field, FieldLike, control_field, space_time, values_of
from .mesh import EllipticOperator, Mesh
from .problem import ProblemSpec, cons, initial_state, lagr, nonlin

NEWTON_TOL = 1e-10
LIN_TOL = 1e-12


class NewtonError(RuntimeError):
    def __init__(self, step: int, residual: float, msg: str = "Newton iteration did not converge"):
        super().__init__(f"{msg} at time step {step} (last residual {residual:.3e})")
        self.step = step
        self.residual = residual


class LinearSolveError(RuntimeError):
    def __init__(self, msg: str, min_diagonal: float):
        super().__init__(f"{msg}; smallest diagonal entry of the step matrix = {min_diagonal:.3e}")
        self.min_diagonal = min_diagonal


@dataclass
class PdeSolveDiagnostics:
    newton_iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0


def _step_solve(op: EllipticOperator, dt: float, shift: np.ndarray, rhs: np.ndarray,
                x0: np.ndarray, lin_tol: float, maxiter: int | None = None) -> tuple[np.ndarray, int]:
    indptr, indices, data = op.scaled(dt)
    x = np.array(x0, dtype=float, copy=True)
    shift = np.ascontiguousarray(shift, dtype=float)
    n = rhs.size
    it, rel, status = _backend.pcg_csr(indptr, indices, data, shift,
                                       np.ascontiguousarray(rhs, dtype=float), x, lin_tol,
                                       maxiter or 10 * n + 100)
    if status != 0:
        mind = float(np.min(shift + dt * op.diagonal))
        why = "matrix not positive definite (CG breakdown)" if status == 2 else \
            f"CG did not reach relative residual {lin_tol:g} (got {rel:.2e})"
        raise LinearSolveError(why, mind)
    return x, it


def solve_state(spec: ProblemSpec, op: EllipticOperator, u: FieldLike, *,
                newton_tol: float = NEWTON_TOL, lin_tol: float = LIN_TOL, max_iters: int = 50,
                initial_guess: str = "previous") -> tuple[Field, PdeSolveDiagnostics]:
    """Solve ``y_t + A y + f(y) = u`` by implicit Euler and damped Newton.

    Each step solves ``(I + dt A) y^k + dt f(y^k) = y^{k-1} + dt u^k``; the
    dt-scaled residual must reach ``newton_tol * dt`` in max norm.
    ``initial_guess`` is ``"previous"`` (last level) or ``"zero"``.
    """
    mesh = op.mesh
    uv = values_of(u, mesh)
    if not np.all(np.isfinite(uv)):
        raise ValueError("control contains non-finite values")
    dt = mesh.dt
    A = op.matrix
    tic = time.perf_counter()
    diag = PdeSolveDiagnostics()
    y = np.empty((mesh.nt + 1, mesh.n))
    y[0] = initial_state(spec, mesh)
    tol = newton_tol * dt

    def residual(v, rhs):
        fv = nonlin(spec, "f", v)
        if not np.all(np.isfinite(fv)):
            raise FloatingPointError("nonlinearity f returned non-finite values")
        return v + dt * (A @ v) + dt * fv - rhs

    for k in range(1, mesh.nt + 1):
        rhs = y[k - 1] + dt * uv[k]
        v = y[k - 1].copy() if initial_guess == "previous" else np.zeros(mesh.n)
        R = residual(v, rhs)
        rn = float(np.max(np.abs(R)))
        lin_its = 0
        for it in range(max_iters + 1):
            if rn <= tol:
                break
            if it == max_iters:
                raise NewtonError(k, rn / dt)
            shift = 1.0 + dt * nonlin(spec, "df", v)
            delta, li = _step_solve(op, dt, shift, -R, np.zeros(mesh.n), lin_tol)
            lin_its += li
            s = 1.0
            for _ in range(31):
                cand = v + s * delta
                Rc = residual(cand, rhs)
                rc = float(np.max(np.abs(Rc)))
                if rc < (1.0 - 1e-4 * s) * rn or rc <= tol:
                    break
                s *= 0.5
            else:
                raise NewtonError(k, rn / dt, "line search failed after 30 halvings")
            v, R, rn = cand, Rc, rc
        y[k] = v
        diag.newton_iterations.append(it)
        diag.residuals.append(rn / dt)
        diag.linear_iterations.append(lin_its)
    diag.wall_time = time.perf_counter() - tic
    return Field(y, mesh), diag


def solve_linearized(op: EllipticOperator, c: FieldLike, rhs: FieldLike, init=None, *,
                     lin_tol: float = LIN_TOL) -> Field:
    """Solve ``y_t + A y + c y = rhs`` with ``y(0) = init`` (default 0) by implicit Euler."""
    mesh = op.mesh
    cv, rv = values_of(c, mesh), values_of(rhs, mesh)
    if not (np.all(np.isfinite(cv)) and np.all(np.isfinite(rv))):
        raise ValueError("coefficient or right-hand side contains non-finite values")
    dt = mesh.dt
    y = np.empty((mesh.nt + 1, mesh.n))
    y[0] = 0.0 if init is None else np.broadcast_to(np.asarray(init, dtype=float), (mesh.n,))
    for k in range(1, mesh.nt + 1):
        y[k], _ = _step_solve(op, dt, 1.0 + dt * cv[k], y[k - 1] + dt * rv[k], y[k - 1], lin_tol)
    return Field(y, mesh)


def adjoint_source(spec: ProblemSpec, y: FieldLike, u: FieldLike, e: FieldLike | None,
                   mesh: Mesh) -> np.ndarray:
    """``L_y + e*g_y`` on all levels (level 0 unused)."""
    x, t = space_time(mesh)
    yv, uv = values_of(y, mesh), values_of(u, mesh)
    src = lagr(spec, "L_y", x, t, yv, uv).copy()
    if e is not None:
        src += values_of(e, mesh) * cons(spec, "g_y", x, t, yv)
    return src


def solve_adjoint(spec: ProblemSpec, op: EllipticOperator, y: FieldLike, u: FieldLike,
                  e: FieldLike | None = None, *, lin_tol: float = LIN_TOL) -> Field:
    """Backward sweep for ``-phi_t + A phi + f'(y) phi = -L_y - e g_y``, ``phi(T) = 0``."""
    mesh = op.mesh
    dt = mesh.dt
    yv = values_of(y, mesh)
    src = adjoint_source(spec, y, u, e, mesh)
    phi = np.zeros((mesh.nt + 2, mesh.n))  # extra level nt+1 holds the terminal zero
    for k in range(mesh.nt, 0, -1):
        shift = 1.0 + dt * nonlin(spec, "df", yv[k])
        phi[k], _ = _step_solve(op, dt, shift, phi[k + 1] - dt * src[k], phi[k + 1], lin_tol)
    phi[0] = phi[1]
    return Field(phi[:-1], mesh)


def adjoint_residual(spec: ProblemSpec, op: EllipticOperator, y: FieldLike, u: FieldLike,
                     phi: FieldLike, e: FieldLike | None = None) -> float:
    """Max-norm residual of the discrete adjoint equation, per unit time."""
    mesh = op.mesh
    dt = mesh.dt
    yv, pv = values_of(y, mesh), values_of(phi, mesh)
    src = adjoint_source(spec, y, u, e, mesh)
    nxt = np.vstack([pv[2:], np.zeros((1, mesh.n))])
    cur = pv[1:]
    fp = nonlin(spec, "df", yv[1:])
    res = (cur - nxt) / dt + (op.matrix @ cur.T).T + fp * cur + src[1:]
    return float(np.max(np.abs(res)))


@dataclass
class AprioriRatios:
    linf_ratio: float
    energy_ratio: float
    p: float
    norms: dict


def apriori_check(y: Field, u: FieldLike, y0, op: EllipticOperator, p: float = 4.0) -> AprioriRatios:
    """Discrete ratios of the a-priori state bounds.

    ``linf_ratio = ||y||_inf / (||u||_{L^p(0,T;L2)} + ||y0||_inf)`` and
    ``energy_ratio = (||y_t||_{L2(L2)} + ||A y||_{L2(L2)}) /
    (||u||_{L2(L2)} + ||y0||_inf + ||y0||_V)`` with difference quotients for y_t
    and the energy norm ``sqrt(y0' A y0)`` standing in for the H^1_0 norm.
    """
    mesh = y.mesh
    yv, uv = y.values, values_of(u, mesh)
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (mesh.n,))
    w, dt = mesh.cell_volume, mesh.dt
    u_l2x = np.sqrt(w * np.sum(uv[1:] ** 2, axis=1))  # ||u(t_k)||_{L2}
    u_lp = float((dt * np.sum(u_l2x**p)) ** (1.0 / p))
    u_l2 = float(np.sqrt(dt * np.sum(u_l2x**2)))
    y_inf = float(np.max(np.abs(yv)))
    y0_inf = float(np.max(np.abs(y0))) if y0.size else 0.0
    y0_v = float(np.sqrt(max(w * y0 @ (op.matrix @ y0), 0.0)))
    yt = np.diff(yv, axis=0) / dt
    yt_l2 = float(np.sqrt(dt * w * np.sum(yt**2)))
    Ay = (op.matrix @ yv[1:].T).T
    Ay_l2 = float(np.sqrt(dt * w * np.sum(Ay**2)))
    den1 = u_lp + y0_inf
    den2 = u_l2 + y0_inf + y0_v
    r1 = y_inf / den1 if den1 > 0 else 0.0
    r2 = (yt_l2 + Ay_l2) / den2 if den2 > 0 else 0.0
    return AprioriRatios(linf_ratio=r1, energy_ratio=r2, p=p,
                         norms={"y_inf": y_inf, "u_lp": u_lp, "u_l2": u_l2, "y0_inf": y0_inf,
                                "y0_V": y0_v, "yt_l2": yt_l2, "Ay_l2": Ay_l2})


def linearized_response(spec: ProblemSpec, op: EllipticOperator, y: FieldLike, v: FieldLike) -> Field:
    """Tangent of the control-to-state map at ``y`` in direction ``v`` (zero initial data)."""
    mesh = op.mesh
    return solve_linearized(op, nonlin(spec, "df", values_of(y, mesh)), v)


__all__ = ["solve_state", "solve_linearized", "solve_adjoint", "adjoint_residual", "apriori_check",
           "linearized_response", "NewtonError", "LinearSolveError", "PdeSolveDiagnostics",
           "control_field"]

"""Augmented-Lagrangian solver for the box- and mixed-constrained control problem.

The box ``a <= u <= b`` is kept by projection. The mixed constraint
``h = g(y) + eps*u <= 0`` enters through the augmented Lagrangian

    Theta_c(u; e) = J(u) + W/(2c) * sum( max(0, e + c*h)^2 - e^2 ),

with ``W = dt*h^dim`` the quadrature weight. Its gradient density is the
reduced gradient ``L_u - phi + eps*e~`` evaluated with the shifted
multiplier ``e~ = max(0, e + c*h)``; the inner loop is a diagonally scaled
projected gradient method with Armijo backtracking.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .fields import Field, FieldLike, control_field, space_time, values_of
from .kkt import (ActiveSets, KKTReport, classify_active_sets, kkt_residuals, mixed_constraint,
                  recover_multipliers)
from .mesh import EllipticOperator
from .pde import NewtonError, LinearSolveError, solve_adjoint, solve_state
from .problem import ProblemSpec, eval_objective, lagr


class OptimizationError(RuntimeError):
    """A state or adjoint solve failed inside the optimizer; ``stage`` names where."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class OptimizeParams:
    c0: float = 1.0
    growth: float = 10.0
    stall_factor: float = 4.0
    c_max: float = 1e8
    damping: float = 1.0
    inner_tol: float = 1e-9
    feas_tol: float = 1e-9
    kkt_tol: float = 1e-6
    max_outer: int = 40
    max_inner: int = 400
    armijo_sigma: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    scale_floor: float = 1e-6
    tol_act: float | None = None

    def __post_init__(self):
        for name in ("c0", "inner_tol", "feas_tol", "kkt_tol", "scale_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.growth > 1:
            raise ValueError("growth factor must exceed 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not 0 < self.armijo_sigma < 1 or not 0 < self.backtrack < 1:
            raise ValueError("Armijo constants must lie in (0, 1)")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration budgets must be at least 1")

    @classmethod
    def from_mapping(cls, m: dict) -> "OptimizeParams":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in m.items():
            if k not in known:
                raise KeyError(f"unknown optimizer option {k!r}")
            if k == "tol_act":
                kw[k] = None if v in (None, "", "auto") else float(v)
            elif k.startswith("max_"):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        return cls(**kw)


@dataclass
class Solution:
    u: Field
    y: Field
    phi: Field
    e: Field
    ehat: Field
    J: float
    report: KKTReport
    sets: ActiveSets
    history: list = field(default_factory=list)
    certified: bool = False
    message: str = ""
    elapsed: float = 0.0  # wall-clock seconds; kept out of persisted reports

    @property
    def mesh(self):
        return self.u.mesh


HISTORY_COLUMNS = ("iteration", "J", "feasibility", "complementarity_ncp", "stationarity",
                   "penalty", "inner_iterations")


def project_box(u: FieldLike, a: float, b: float) -> FieldLike:
    """Nodewise clamp to ``[a, b]``; returns the same kind of object it was given."""
    if isinstance(u, Field):
        return Field(np.clip(u.values, a, b), u.mesh)
    return np.clip(np.asarray(u, dtype=float), a, b)


def _gradient(spec, op, y, u, e):
    """Gradient density ``L_u - phi + eps*e`` and the adjoint used for it."""
    mesh = op.mesh
    x, t = space_time(mesh)
    phi = solve_adjoint(spec, op, y, u, e)
    ev = 0.0 if e is None else values_of(e, mesh)
    G = lagr(spec, "L_u", x, t, values_of(y, mesh), values_of(u, mesh)) - phi.values + spec.eps * ev
    G[0] = G[1]
    return G, phi


def reduced_gradient(spec: ProblemSpec, op: EllipticOperator, u: FieldLike,
                     e: FieldLike | None = None) -> Field:
    """Gradient density of ``J(S(u), u) + W*sum(e*(g(S(u)) + eps*u))`` with respect to ``u``."""
    y, _ = solve_state(spec, op, u)
    G, _ = _gradient(spec, op, y, u, e)
    return Field(G, op.mesh)


def _state(spec, op, u, stage):
    try:
        return solve_state(spec, op, u)[0]
    except (NewtonError, LinearSolveError, FloatingPointError) as exc:
        raise OptimizationError(stage, exc) from exc


def finalize(spec: ProblemSpec, op: EllipticOperator, u: FieldLike, y: Field | None = None,
             e_guess: FieldLike | None = None, kkt_tol: float = 1e-6, tol_act: float | None = None,
             sweeps: int = 2):
    """Recover multipliers at ``u`` and evaluate the KKT report.

    The adjoint depends on ``e`` through its source, so recovery and the
    adjoint solve alternate ``sweeps`` times starting from ``e_guess``.
    """
    mesh = op.mesh
    uf = u if isinstance(u, Field) else Field(u, mesh)
    y = y if y is not None else _state(spec, op, uf, "final state solve")
    sets = classify_active_sets(uf, y, spec, tol_act, mesh)
    e = e_guess
    for _ in range(max(1, sweeps)):
        phi = solve_adjoint(spec, op, y, uf, e)
        mult = recover_multipliers(spec, y, uf, phi, sets)
        e = mult.e
    phi = solve_adjoint(spec, op, y, uf, mult.e)
    mult = recover_multipliers(spec, y, uf, phi, sets)
    rep = kkt_residuals(spec, op, y, uf, phi, mult.e, mult.ehat, sets, kkt_tol, mult.overlap_count)
    return y, phi, mult, sets, rep


def solve_augmented_lagrangian(spec: ProblemSpec, op: EllipticOperator, u_init: FieldLike | None = None,
                               params: OptimizeParams | None = None, callback=None) -> Solution:
    p = params or OptimizeParams()
    mesh = op.mesh
    W = mesh.dt * mesh.cell_volume
    a, b, eps = spec.a, spec.b, spec.eps
    if u_init is None:
        u = np.full((mesh.nt + 1, mesh.n), 0.5 * (a + b))
    else:
        u = values_of(u_init, mesh).copy()
        if np.any(u < a) or np.any(u > b):
            raise ValueError("initial control violates the box constraints")
    u[0] = u[1]
    e = np.zeros_like(u)
    c = p.c0
    x, t = space_time(mesh)
    history = []
    V_prev = np.inf
    tic = time.perf_counter()

    def merit(uv):
        y = _state(spec, op, uv, "inner state solve")
        h = mixed_constraint(spec, y, uv, mesh)
        et = np.maximum(0.0, e + c * h)
        val = eval_objective(spec, y, uv, mesh) + W / (2 * c) * float(np.sum(et[1:] ** 2 - e[1:] ** 2))
        return val, y, h, et

    theta, y, h, et = merit(u)
    pg = np.inf
    certified = False
    final = None
    message = "outer iteration budget exhausted"
    for outer in range(1, p.max_outer + 1):
        s = 1.0
        inner = 0
        for inner in range(1, p.max_inner + 1):
            try:
                G, _ = _gradient(spec, op, y, u, et)
            except (LinearSolveError, FloatingPointError) as exc:
                raise OptimizationError("adjoint solve", exc) from exc
            pg = float(np.max(np.abs(np.clip(u[1:] - G[1:], a, b) - u[1:])))
            if pg <= p.inner_tol:
                break
            Luu = lagr(spec, "L_uu", x, t, y.values, u)
            D = np.maximum(Luu + c * eps**2 * (et > 0), p.scale_floor)
            slack = 1e-14 * max(1.0, abs(theta))
            for _ in range(p.max_backtracks):
                ut = np.clip(u - s * G / D, a, b)
                ut[0] = ut[1]
                th_t, y_t, h_t, et_t = merit(ut)
                if th_t <= theta + p.armijo_sigma * W * float(np.sum(G[1:] * (ut[1:] - u[1:]))) + slack:
                    break
                s *= p.backtrack
            else:
                break  # no descent possible at roundoff level
            u, theta, y, h, et = ut, th_t, y_t, h_t, et_t
            s = min(1.0, s / p.backtrack)
        # multiplier update and complementarity measure
        et = np.maximum(0.0, e + c * h)
        V = float(np.max(np.abs(np.minimum(-h[1:], et[1:]))))
        feas = max(0.0, float(np.max(h[1:])))
        J = eval_objective(spec, y, u, mesh)
        history.append({"iteration": outer, "J": J, "feasibility": feas, "complementarity_ncp": V,
                        "stationarity": pg, "penalty": c, "inner_iterations": inner})
        if callback is not None:
            callback(history[-1])
        e = (1 - p.damping) * e + p.damping * et
        if V <= p.feas_tol:
            final = finalize(spec, op, u, y, control_field(e[1:], mesh), p.kkt_tol, p.tol_act)
            if final[4].certified:
                certified = True
                message = "certified"
                break
        if V > V_prev / p.stall_factor:
            c = min(c * p.growth, p.c_max)
        V_prev = min(V_prev, V)
        theta, y, h, et = merit(u)

    if final is None or not certified:
        final = finalize(spec, op, u, y, control_field(e[1:], mesh), p.kkt_tol, p.tol_act)
        certified = final[4].certified
        if certified:
            message = "certified"
    y, phi, mult, sets, rep = final
    uf = Field(u, mesh)
    return Solution(u=uf, y=y, phi=phi, e=mult.e, ehat=mult.ehat, J=eval_objective(spec, y, uf, mesh),
                    report=rep, sets=sets, history=history, certified=certified,
                    message=message, elapsed=time.perf_counter() - tic)


def brute_force_oracle(spec: ProblemSpec, op: EllipticOperator, **kw) -> Solution:
    """Dense QP reference solution for small convex instances (see :mod:`parabolic_ocp.oracle`)."""
    from .oracle import brute_force_oracle as _oracle
    return _oracle(spec, op, **kw)


__all__ = ["OptimizeParams", "Solution", "OptimizationError", "project_box", "reduced_gradient",
           "solve_augmented_lagrangian", "finalize", "brute_force_oracle", "HISTORY_COLUMNS"]

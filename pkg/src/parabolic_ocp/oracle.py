"""Dense reference solver for tiny convex instances.

For linear ``f = c*y``, affine ``g`` and quadratic ``L`` the discrete
problem is a QP in the stacked control ``u = (u^1, ..., u^nt)``. The
implicit-Euler state is ``y = S u + y_free`` with the dense block
lower-triangular matrix ``S_{kj} = dt * B^{-(k-j+1)}`` and
``B = I + dt*A + dt*c*I``. Nothing here calls the time-stepping code, so
the result is an independent check of the optimizer and the adjoint.

The QP is solved by cvxopt and then polished exactly: the active set read
off the interior-point solution is used to solve the equality-constrained
KKT system by dense linear algebra, and corrected until the multipliers
have the right sign and every dropped constraint holds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Field, control_field, space_time
from .kkt import classify_active_sets, kkt_residuals
from .mesh import EllipticOperator
from .problem import ProblemSpec, cons, eval_objective, initial_state, is_convex_quadratic, lagr, nonlin

MAX_UNKNOWNS = 200


class NotConvexError(ValueError):
    pass


@dataclass
class DenseQP:
    P: np.ndarray
    q: np.ndarray
    G: np.ndarray          # stacked inequality rows: mixed, upper box, lower box
    h: np.ndarray
    S: np.ndarray
    y_free: np.ndarray
    W: float
    n_mixed: int


def state_matrix(op: EllipticOperator, c) -> np.ndarray:
    """Dense control-to-state matrix of the implicit-Euler scheme for ``y_t + A y + c y = u``.

    ``c`` is a scalar or an array of shape ``(nt, n)`` holding the reaction
    coefficient on levels ``1..nt``.
    """
    mesh = op.mesh
    n, nt, dt = mesh.n, mesh.nt, mesh.dt
    cq = np.broadcast_to(np.asarray(c, dtype=float), (nt, n))
    A = op.matrix.toarray()
    Binv = [np.linalg.inv(np.eye(n) + dt * A + dt * np.diag(cq[k])) for k in range(nt)]
    S = np.zeros((nt * n, nt * n))
    for j in range(nt):
        blk = dt * Binv[j]
        S[j * n:(j + 1) * n, j * n:(j + 1) * n] = blk
        for k in range(j + 1, nt):
            blk = Binv[k] @ blk
            S[k * n:(k + 1) * n, j * n:(j + 1) * n] = blk
    return S


def free_response(op: EllipticOperator, c: float, y0: np.ndarray) -> np.ndarray:
    mesh = op.mesh
    B = np.eye(mesh.n) + mesh.dt * op.matrix.toarray() + mesh.dt * c * np.eye(mesh.n)
    out, cur = [], y0
    for _ in range(mesh.nt):
        cur = np.linalg.solve(B, cur)
        out.append(cur)
    return np.concatenate(out)


def assemble_qp(spec: ProblemSpec, op: EllipticOperator) -> DenseQP:
    mesh = op.mesh
    x, t = space_time(mesh)
    zero = np.zeros((mesh.nt + 1, mesh.n))
    c = float(nonlin(spec, "df", np.zeros(1))[0])
    S = state_matrix(op, c)
    yf = free_response(op, c, initial_state(spec, mesh))
    q_of = lambda name: lagr(spec, name, x, t, zero, zero)[1:].ravel()
    Ly0, Lu0 = q_of("L_y"), q_of("L_u")
    Dyy, Dyu, Duu = q_of("L_yy"), q_of("L_yu"), q_of("L_uu")
    W = mesh.dt * mesh.cell_volume
    SD = S.T * Dyy  # S^T diag(Dyy)
    P = W * (SD @ S + S.T * Dyu + (S.T * Dyu).T + np.diag(Duu))
    P = 0.5 * (P + P.T)
    q = W * (S.T @ (Ly0 + Dyy * yf) + Lu0 + Dyu * yf)
    g0 = cons(spec, "g", x, t, zero)[1:].ravel()
    gy = cons(spec, "g_y", x, t, zero)[1:].ravel()
    N = S.shape[0]
    Gm = gy[:, None] * S + spec.eps * np.eye(N)
    hm = -(g0 + gy * yf)
    G = np.vstack([Gm, np.eye(N), -np.eye(N)])
    h = np.concatenate([hm, np.full(N, spec.b), np.full(N, -spec.a)])
    return DenseQP(P, q, G, h, S, yf, W, N)


def _solve_cvxopt(qp: DenseQP, tol: float):
    from cvxopt import matrix, solvers
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 200}
    res = solvers.qp(matrix(qp.P), matrix(qp.q), matrix(qp.G), matrix(qp.h), options=opts)
    if res["status"] not in ("optimal", "unknown") or res["x"] is None:
        raise RuntimeError(f"QP solver failed with status {res['status']}")
    return np.array(res["x"]).ravel(), np.array(res["z"]).ravel()


def _equality_kkt(qp: DenseQP, active: np.ndarray):
    N = qp.P.shape[0]
    A = qp.G[active]
    m = A.shape[0]
    K = np.zeros((N + m, N + m))
    K[:N, :N] = qp.P
    K[:N, N:] = A.T
    K[N:, :N] = A
    rhs = np.concatenate([-qp.q, qp.h[active]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0] if m else np.linalg.solve(qp.P, -qp.q)
    z = np.zeros(qp.G.shape[0])
    z[active] = sol[N:]
    return sol[:N], z


def solve_qp_exact(qp: DenseQP, tol: float = 1e-12, max_fix: int = 50):
    """Interior-point solve followed by active-set polishing to machine precision."""
    u, z = _solve_cvxopt(qp, 1e-11)
    slack = qp.h - qp.G @ u
    active = z > slack
    for _ in range(max_fix):
        u, z = _equality_kkt(qp, active)
        viol = qp.G @ u - qp.h
        bad_sign = active & (z < -tol)
        bad_feas = ~active & (viol > tol * (1 + np.abs(qp.h)))
        if not bad_sign.any() and not bad_feas.any():
            return u, z
        # drop the most negative multiplier, add the most violated constraint
        if bad_sign.any():
            active[np.argmin(np.where(bad_sign, z, np.inf))] = False
        if bad_feas.any():
            active[np.argmax(np.where(bad_feas, viol, -np.inf))] = True
    raise RuntimeError("active-set polishing did not settle")


def _solution_from_control(spec, op, qp, u, e, ehat, kkt_tol, tol_act, message):
    from .optimize import Solution

    mesh = op.mesh
    x, t = space_time(mesh)
    shape = (mesh.nt, mesh.n)
    uf = control_field(u.reshape(shape), mesh)
    y = Field(np.vstack([initial_state(spec, mesh), (qp.S @ u + qp.y_free).reshape(shape)]), mesh)
    ef = control_field(e.reshape(shape), mesh)
    hf = control_field(ehat.reshape(shape), mesh)
    src = (lagr(spec, "L_y", x, t, y.values, uf.values)
           + ef.values * cons(spec, "g_y", x, t, y.values))[1:].ravel()
    phi = control_field((-qp.S.T @ src).reshape(shape), mesh)
    sets = classify_active_sets(uf, y, spec, tol_act, mesh)
    rep = kkt_residuals(spec, op, y, uf, phi, ef, hf, sets, kkt_tol)
    return Solution(u=uf, y=y, phi=phi, e=ef, ehat=hf, J=eval_objective(spec, y, uf, mesh), report=rep,
                    sets=sets, history=[], certified=rep.certified, message=message)


def _check_size(op):
    N = op.mesh.nt * op.mesh.n
    if N > MAX_UNKNOWNS:
        raise ValueError(f"oracle limited to {MAX_UNKNOWNS} control unknowns, instance has {N}")
    return N


def brute_force_oracle(spec: ProblemSpec, op: EllipticOperator, kkt_tol: float = 1e-6,
                       tol_act: float | None = None):
    """Exact discrete optimum and multipliers of a small convex instance."""
    reason = is_convex_quadratic(spec)
    if reason is not None:
        raise NotConvexError(f"oracle needs a convex quadratic instance: {reason}")
    N = _check_size(op)
    qp = assemble_qp(spec, op)
    u, z = solve_qp_exact(qp)
    e = z[:N] / qp.W
    ehat = (z[N:2 * N] - z[2 * N:]) / qp.W
    return _solution_from_control(spec, op, qp, u, e, ehat, kkt_tol, tol_act, "dense QP oracle")


def quadratic_stationary_point(spec: ProblemSpec, op: EllipticOperator, kkt_tol: float = 1e-6,
                               tol_act: float | None = None):
    """Unconstrained stationary point ``P u = -q`` of a quadratic instance, convex or not.

    Meant for building indefinite test cases whose stationary point lies
    strictly inside every constraint; zero multipliers are returned.
    """
    reason = is_convex_quadratic(spec, require_convex=False)
    if reason is not None:
        raise NotConvexError(f"instance is not quadratic: {reason}")
    N = _check_size(op)
    qp = assemble_qp(spec, op)
    u = np.linalg.solve(qp.P, -qp.q)
    zero = np.zeros(N)
    return _solution_from_control(spec, op, qp, u, zero, zero, kkt_tol, tol_act, "dense stationary point")


__all__ = ["brute_force_oracle", "quadratic_stationary_point", "assemble_qp", "state_matrix", "free_response", "solve_qp_exact",
           "DenseQP", "NotConvexError", "MAX_UNKNOWNS"]

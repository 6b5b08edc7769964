"""First-order optimality: active sets, multipliers, KKT residuals and Robinson's CQ.

All masks and per-node quantities live on the control levels ``1..nt`` of
the space-time grid (shape ``(nt, n)``). Multiplier fields returned to the
caller are full :class:`~parabolic_ocp.fields.Field` objects whose level 0
repeats level 1.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .fields import Field, FieldLike, control_field, space_time, values_of
from .mesh import EllipticOperator, Mesh
from .pde import adjoint_residual, solve_linearized
from .problem import ProblemSpec, cons, lagr, nonlin


def default_tol_act(spec: ProblemSpec) -> float:
    return 1e-8 * (spec.b - spec.a)


def mixed_constraint(spec: ProblemSpec, y: FieldLike, u: FieldLike, mesh: Mesh) -> np.ndarray:
    """``g(x, t, y) + eps*u`` on all levels."""
    x, t = space_time(mesh)
    return cons(spec, "g", x, t, values_of(y, mesh)) + spec.eps * values_of(u, mesh)


@dataclass(frozen=True, eq=False)
class ActiveSets:
    mask_a: np.ndarray
    mask_b: np.ndarray
    mask_ab: np.ndarray
    mask_0: np.ndarray
    tol_act: float
    mesh: Mesh

    def measures(self) -> dict:
        """Space-time measure of each region (uniform weights ``dt*h^dim``)."""
        w = self.mesh.dt * self.mesh.cell_volume
        return {k: float(w * np.count_nonzero(getattr(self, k)))
                for k in ("mask_a", "mask_b", "mask_ab", "mask_0")}

    def counts(self) -> dict:
        return {k: int(np.count_nonzero(getattr(self, k)))
                for k in ("mask_a", "mask_b", "mask_ab", "mask_0")}


def classify_active_sets(u: FieldLike, y: FieldLike, spec: ProblemSpec,
                         tol_act: float | None = None, mesh: Mesh | None = None) -> ActiveSets:
    mesh = mesh or (u.mesh if isinstance(u, Field) else y.mesh)
    tol = default_tol_act(spec) if tol_act is None else float(tol_act)
    uq = values_of(u, mesh)[1:]
    mask_a = np.abs(uq - spec.a) <= tol
    mask_b = (np.abs(uq - spec.b) <= tol) & ~mask_a
    mask_ab = ~(mask_a | mask_b)
    h = mixed_constraint(spec, y, u, mesh)[1:]
    mask_0 = np.abs(h) <= tol
    return ActiveSets(mask_a, mask_b, mask_ab, mask_0, tol, mesh)


def check_separation(spec: ProblemSpec, y: FieldLike, u: FieldLike, mesh: Mesh | None = None) -> float:
    """Separation margin ``gamma = -max(a - u + eps*u + g)`` over the control levels."""
    mesh = mesh or (u.mesh if isinstance(u, Field) else y.mesh)
    uq = values_of(u, mesh)[1:]
    h = mixed_constraint(spec, y, u, mesh)[1:]
    return float(-np.max(spec.a - uq + h))


def upper_separation_margin(spec: ProblemSpec, y: FieldLike, sets: ActiveSets) -> float:
    """``-max(g + eps*b)`` over the upper-active set; ``+inf`` when that set is empty."""
    mesh = sets.mesh
    if not sets.mask_b.any():
        return float("inf")
    x, t = space_time(mesh)
    g = cons(spec, "g", x, t, values_of(y, mesh))[1:]
    return float(-np.max(g[sets.mask_b] + spec.eps * spec.b))


@dataclass
class Multipliers:
    e: Field
    ehat: Field
    zeta: Field
    overlap_count: int


def recover_multipliers(spec: ProblemSpec, y: FieldLike, u: FieldLike, phi: FieldLike,
                        sets: ActiveSets) -> Multipliers:
    """Split ``zeta = phi - L_u`` into ``eps*e + ehat`` according to the active sets.

    Nodes where both the box and the mixed constraint are active are outside
    the separation hypotheses. There the nonnegative part of ``zeta`` goes to
    ``e`` and the rest to ``ehat``; the number of such nodes is returned.
    """
    mesh = sets.mesh
    x, t = space_time(mesh)
    yv, uv, pv = values_of(y, mesh), values_of(u, mesh), values_of(phi, mesh)
    zeta = (pv - lagr(spec, "L_u", x, t, yv, uv))[1:]
    eps = spec.eps
    e = np.zeros_like(zeta)
    ehat = np.zeros_like(zeta)

    mixed_only = sets.mask_ab & sets.mask_0
    e[mixed_only] = zeta[mixed_only] / eps
    box_only = (sets.mask_a | sets.mask_b) & ~sets.mask_0
    ehat[box_only] = zeta[box_only]
    overlap = (sets.mask_a | sets.mask_b) & sets.mask_0
    e[overlap] = np.maximum(zeta[overlap], 0.0) / eps
    ehat[overlap] = zeta[overlap] - eps * e[overlap]
    return Multipliers(control_field(e, mesh), control_field(ehat, mesh),
                       control_field(zeta, mesh), int(np.count_nonzero(overlap)))


@dataclass
class KKTReport:
    stationarity: float
    adjoint_residual: float
    complementarity: float
    e_sign_violation: float
    ehat_sign_violation_a: float
    ehat_sign_violation_b: float
    ehat_inactive: float
    feasibility: float
    box_violation: float
    separation_margin: float
    upper_separation_margin: float
    overlap_count: int
    kkt_tol: float
    certified: bool

    def residuals(self) -> dict:
        return {k: getattr(self, k) for k in RESIDUAL_KEYS}

    def failing(self) -> list[str]:
        return [k for k, v in self.residuals().items() if not v <= self.kkt_tol]

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity; an empty upper-active set is reported as null
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


RESIDUAL_KEYS = ("stationarity", "adjoint_residual", "complementarity", "e_sign_violation",
                 "ehat_sign_violation_a", "ehat_sign_violation_b", "ehat_inactive",
                 "feasibility", "box_violation")


def _max0(a: np.ndarray) -> float:
    return float(np.max(a)) if a.size else 0.0


def kkt_residuals(spec: ProblemSpec, op: EllipticOperator, y: FieldLike, u: FieldLike,
                  phi: FieldLike, e: FieldLike, ehat: FieldLike, sets: ActiveSets,
                  kkt_tol: float = 1e-6, overlap_count: int = 0) -> KKTReport:
    mesh = op.mesh
    x, t = space_time(mesh)
    yv, uv = values_of(y, mesh), values_of(u, mesh)
    pv, ev, hv = values_of(phi, mesh), values_of(e, mesh), values_of(ehat, mesh)
    Lu = lagr(spec, "L_u", x, t, yv, uv)
    stat = (Lu - pv + spec.eps * ev + hv)[1:]
    h = mixed_constraint(spec, y, u, mesh)[1:]
    eq, hq, uq = ev[1:], hv[1:], uv[1:]
    rep = KKTReport(
        stationarity=float(np.max(np.abs(stat))),
        adjoint_residual=adjoint_residual(spec, op, yv, uv, pv, ev),
        complementarity=float(np.max(np.abs(eq * h))),
        e_sign_violation=max(0.0, -float(np.min(eq))),
        ehat_sign_violation_a=max(0.0, _max0(hq[sets.mask_a])),
        ehat_sign_violation_b=max(0.0, _max0(-hq[sets.mask_b])),
        ehat_inactive=_max0(np.abs(hq[sets.mask_ab])),
        feasibility=max(0.0, float(np.max(h))),
        box_violation=max(0.0, float(np.max(spec.a - uq)), float(np.max(uq - spec.b))),
        separation_margin=check_separation(spec, yv, uv, mesh),
        upper_separation_margin=upper_separation_margin(spec, yv, sets),
        overlap_count=int(overlap_count),
        kkt_tol=float(kkt_tol),
        certified=False,
    )
    rep.certified = not rep.failing()
    return rep


@dataclass
class RobinsonReport:
    rho: float
    delta: float
    success: bool
    worst_inequality: int
    worst_level: int
    worst_node: int
    lhs_max: tuple
    C2: float
    n_Qa: int
    n_Qrho: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lhs_max"] = list(self.lhs_max)
        return d

    @property
    def hint(self) -> str:
        return "" if self.success else f"inequality {self.worst_inequality} violated; try a smaller rho"


def verify_robinson(spec: ProblemSpec, op: EllipticOperator, y: FieldLike, u: FieldLike,
                    rho: float, tol_act: float | None = None) -> RobinsonReport:
    """Build the explicit direction of the Robinson-CQ argument and measure its interiority.

    With ``alpha = g_y/eps``, ``z_u`` the linearized response to ``u`` and
    ``xi`` the response to ``w = u - rho + alpha*z_u`` under the shifted
    coefficient ``f' + alpha``, set ``u_rho = w - alpha*xi``. The modified
    control is ``a + rho`` on the lower-active set, ``u + rho`` on the thin
    layer ``a < u <= a + 2*C2*rho`` and ``u_rho`` elsewhere. ``delta`` is minus
    the largest left-hand side of the three linearized constraints.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    mesh = op.mesh
    x, t = space_time(mesh)
    yv, uv = values_of(y, mesh), values_of(u, mesh)
    tol = default_tol_act(spec) if tol_act is None else tol_act
    fp = nonlin(spec, "df", yv)
    alpha = cons(spec, "g_y", x, t, yv) / spec.eps
    z_u = solve_linearized(op, fp, uv).values
    w = uv - rho + alpha * z_u
    xi = solve_linearized(op, fp + alpha, w).values
    u_rho = w - alpha * xi
    C2 = float(np.max(np.abs(u_rho - uv)[1:])) / rho

    q_a = np.abs(uv - spec.a) <= tol
    q_rho = ~q_a & (uv > spec.a) & (uv <= spec.a + 2.0 * C2 * rho)
    u_hat = np.where(q_a, spec.a + rho, np.where(q_rho, uv + rho, u_rho))
    u_tilde = u_hat - uv
    y_tilde = solve_linearized(op, fp, u_tilde).values  # = z_{u_hat} - z_u by linearity

    g = cons(spec, "g", x, t, yv)
    lhs = np.stack([uv - spec.b + u_tilde,
                    spec.a - uv - u_tilde,
                    g + spec.eps * uv + alpha * spec.eps * y_tilde + spec.eps * u_tilde])[:, 1:]
    per = lhs.reshape(3, -1).max(axis=1)
    worst = int(np.argmax(per))
    flat = int(np.argmax(lhs[worst]))
    lvl, node = divmod(flat, mesh.n)
    delta = -float(per[worst])
    return RobinsonReport(rho=float(rho), delta=delta, success=delta > 0, worst_inequality=worst + 1,
                          worst_level=lvl + 1, worst_node=node, lhs_max=tuple(float(p) for p in per),
                          C2=C2, n_Qa=int(np.count_nonzero(q_a[1:])),
                          n_Qrho=int(np.count_nonzero(q_rho[1:])))


__all__ = ["ActiveSets", "classify_active_sets", "check_separation", "upper_separation_margin",
           "Multipliers", "recover_multipliers", "KKTReport", "kkt_residuals", "RobinsonReport",
           "verify_robinson", "mixed_constraint", "default_tol_act"]

"""Second-order checks: the Lagrangian Hessian on critical directions and quadratic growth.

A critical direction is a control direction ``v`` together with its
linearized state response ``z``. Admissible directions satisfy the tangent
conditions of the box on the box-active sets and of the mixed constraint on
its active set, and have nonpositive first-order change of the objective.
At a KKT point the last condition forces ``v = 0`` where the box multiplier
is nonzero and ``g_y z + eps*v = 0`` where the mixed multiplier is positive;
the sampler enforces those equalities exactly and the sign conditions on the
weakly active remainder.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import Field, control_field, l2_norm_q, space_time, values_of
from .kkt import ActiveSets, mixed_constraint
from .mesh import EllipticOperator
from .optimize import Solution, project_box
from .pde import solve_linearized, solve_state
from .problem import ProblemSpec, cons, eval_objective, lagr, nonlin

STRONG_TOL = 1e-8
SOC_TOL = 1e-8
CHECK_TOL = 1e-10


class SamplingError(RuntimeError):
    pass


class TrivialConeError(SamplingError):
    """Every node is strongly active, so the critical cone is ``{0}``."""


@dataclass
class CriticalDirection:
    v: Field
    z: Field
    enforced: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)


def quadratic_form(spec: ProblemSpec, y: Field, u: Field, phi: Field, e: Field,
                   direction: CriticalDirection, mesh=None) -> float:
    """``int L_yy z^2 + 2 L_yu z v + L_uu v^2 + e g_yy z^2 + phi f''(y) z^2`` over the control levels."""
    mesh = mesh or y.mesh
    x, t = space_time(mesh)
    yv, uv = values_of(y, mesh), values_of(u, mesh)
    z, v = values_of(direction.z, mesh), values_of(direction.v, mesh)
    integrand = (lagr(spec, "L_yy", x, t, yv, uv) * z * z
                 + 2.0 * lagr(spec, "L_yu", x, t, yv, uv) * z * v
                 + lagr(spec, "L_uu", x, t, yv, uv) * v * v
                 + values_of(e, mesh) * cons(spec, "g_yy", x, t, yv) * z * z
                 + values_of(phi, mesh) * nonlin(spec, "d2f", yv) * z * z)
    return float(mesh.dt * mesh.cell_volume * np.sum(integrand[1:]))


def first_order_change(spec: ProblemSpec, sol: Solution, direction: CriticalDirection) -> float:
    mesh = sol.mesh
    x, t = space_time(mesh)
    yv, uv = sol.y.values, sol.u.values
    val = (lagr(spec, "L_y", x, t, yv, uv) * direction.z.values
           + lagr(spec, "L_u", x, t, yv, uv) * direction.v.values)
    return float(mesh.dt * mesh.cell_volume * np.sum(val[1:]))


def _strong_sets(sol: Solution, sets: ActiveSets, strong_tol: float):
    eq, hq = sol.e.values[1:], sol.ehat.values[1:]
    box = sets.mask_a | sets.mask_b
    strong_box = box & (np.abs(hq) > strong_tol)
    strong_mixed = sets.mask_0 & (eq > strong_tol)
    return strong_box, strong_mixed


def _respond(op, fp, alpha, M, w):
    """Direction equal to ``w`` off ``M`` with ``g_y z + eps v = 0`` on ``M``; returns ``(v, z)``."""
    mesh = op.mesh
    aM = np.zeros_like(fp)
    aM[1:][M] = alpha[1:][M]
    aM[0] = aM[1]
    wq = w.copy()
    wq[1:][M] = 0.0
    wq[0] = wq[1]
    z = solve_linearized(op, fp + aM, wq).values
    v = wq - aM * z
    v[0] = v[1]
    return v, z


def verify_direction(spec: ProblemSpec, op: EllipticOperator, sol: Solution, sets: ActiveSets,
                     direction: CriticalDirection, soc_tol: float = SOC_TOL,
                     tol: float = CHECK_TOL) -> dict:
    """Independent re-check of the four cone conditions; returns margins and pass flags."""
    mesh = op.mesh
    x, t = space_time(mesh)
    v, z = direction.v.values, direction.z.values
    fp = nonlin(spec, "df", sol.y.values)
    z_chk = solve_linearized(op, fp, v).values
    scale = max(1.0, float(np.max(np.abs(z))))
    c2 = float(np.max(np.abs(z_chk - z))) / scale
    vq = v[1:]
    c3 = max(_neg_part(vq[sets.mask_a]), _neg_part(-vq[sets.mask_b]))
    lin = (cons(spec, "g_y", x, t, sol.y.values) * z + spec.eps * v)[1:]
    c4 = max(0.0, float(np.max(lin[sets.mask_0]))) if sets.mask_0.any() else 0.0
    c1 = first_order_change(spec, sol, direction)
    bound = soc_tol * (l2_norm_q(z, mesh) + l2_norm_q(v, mesh))
    return {"c1": c1, "c1_bound": bound, "c1_ok": c1 <= bound, "c2": c2, "c2_ok": c2 <= 1e-9,
            "c3": c3, "c3_ok": c3 <= tol, "c4": c4, "c4_ok": c4 <= tol,
            "ok": c1 <= bound and c2 <= 1e-9 and c3 <= tol and c4 <= tol}


def _neg_part(a: np.ndarray) -> float:
    return max(0.0, -float(np.min(a))) if a.size else 0.0


def sample_critical_direction(spec: ProblemSpec, op: EllipticOperator, sol: Solution,
                              sets: ActiveSets | None = None, seed=0, *, strong_tol: float = STRONG_TOL,
                              soc_tol: float = SOC_TOL, max_attempts: int = 10) -> CriticalDirection:
    """Random element of the critical cone at ``sol``, normalized to ``||v||_{L2} = 1``.

    ``seed`` may be an int or a sequence (e.g. ``[base_seed, sample_index]``)
    so that each sample has its own reproducible stream.
    """
    sets = sets or sol.sets
    mesh = op.mesh
    x, t = space_time(mesh)
    rng = np.random.default_rng(seed)
    yv = sol.y.values
    fp = nonlin(spec, "df", yv)
    gy = cons(spec, "g_y", x, t, yv)
    alpha = gy / spec.eps
    strong_box, M = _strong_sets(sol, sets, strong_tol)
    weak_a = sets.mask_a & ~strong_box
    weak_b = sets.mask_b & ~strong_box
    weak_0 = sets.mask_0 & ~M
    if (strong_box | M).all():
        raise TrivialConeError("all nodes strongly active: the critical cone is {0}")
    for attempt in range(1, max_attempts + 1):
        wq = rng.standard_normal((mesh.nt, mesh.n))
        wq[strong_box] = 0.0
        wq[weak_a] = np.abs(wq[weak_a])
        wq[weak_b] = -np.abs(wq[weak_b])
        w = np.vstack([wq[:1], wq])
        v, z = _respond(op, fp, alpha, M, w)
        zeroed = 0
        if weak_0.any():
            for _ in range(2):
                cap = (-gy * z / spec.eps)[1:]
                bad = weak_0 & (v[1:] > cap + CHECK_TOL)
                if not bad.any():
                    break
                w[1:][bad] = cap[bad]
                w[0] = w[1]
                v, z = _respond(op, fp, alpha, M, w)
            lin = (gy * z + spec.eps * v)[1:]
            bad = weak_0 & (lin > CHECK_TOL)
            if bad.any():
                zeroed = int(np.count_nonzero(bad))
                w[1:][bad] = 0.0
                w[0] = w[1]
                v, z = _respond(op, fp, alpha, M, w)
        nv = l2_norm_q(v, mesh)
        if nv == 0.0:
            continue
        d = CriticalDirection(Field(v / nv, mesh), Field(z / nv, mesh),
                              enforced={"strong_box": int(np.count_nonzero(strong_box)),
                                        "strong_mixed": int(np.count_nonzero(M)),
                                        "weak_mixed_zeroed": zeroed, "attempts": attempt})
        d.checks = verify_direction(spec, op, sol, sets, d, soc_tol)
        if d.checks["ok"]:
            return d
    raise SamplingError(f"no admissible critical direction after {max_attempts} attempts")


@dataclass
class SOCReport:
    n_requested: int
    n_accepted: int
    n_rejected: int
    min_value: float
    median_value: float
    max_value: float
    soc_margin: float
    luu_lower_bound: float
    passed: bool
    low_confidence: bool
    trivial_cone: bool = False
    kappa: float | None = None
    values: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("values")
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def min_rayleigh(spec: ProblemSpec, op: EllipticOperator, sol: Solution, n_samples: int = 200,
                 seed: int = 0, soc_margin: float = 0.0, strong_tol: float = STRONG_TOL,
                 soc_tol: float = SOC_TOL) -> SOCReport:
    """Sample the cone and report the normalized form ``Q(z, v)/||v||^2``."""
    if n_samples < 10:
        raise ValueError("need at least 10 samples")
    mesh = op.mesh
    vals = []
    rejected = 0
    x, t = space_time(mesh)
    luu = float(np.min(lagr(spec, "L_uu", x, t, sol.y.values, sol.u.values)[1:]))
    for i in range(n_samples):
        try:
            d = sample_critical_direction(spec, op, sol, sol.sets, [seed, i], strong_tol=strong_tol,
                                          soc_tol=soc_tol)
        except TrivialConeError:
            # second-order conditions hold vacuously on {0}
            return SOCReport(n_samples, 0, 0, float("nan"), float("nan"), float("nan"), soc_margin, luu,
                             passed=True, low_confidence=False, trivial_cone=True, values=[])
        except SamplingError:
            rejected += 1
            continue
        vals.append(quadratic_form(spec, sol.y, sol.u, sol.phi, sol.e, d, mesh)
                    / l2_norm_q(d.v.values, mesh) ** 2)
    arr = np.array(vals)
    if arr.size == 0:
        return SOCReport(n_samples, 0, rejected, float("nan"), float("nan"), float("nan"), soc_margin,
                         luu, False, True, values=[])
    mn = float(arr.min())
    return SOCReport(n_requested=n_samples, n_accepted=int(arr.size), n_rejected=rejected, min_value=mn,
                     median_value=float(np.median(arr)), max_value=float(arr.max()), soc_margin=soc_margin,
                     luu_lower_bound=luu, passed=mn > soc_margin,
                     low_confidence=arr.size < n_samples / 2, values=[float(v) for v in arr])


@dataclass
class GrowthReport:
    kappa: float
    ratios: list
    n_feasible: int
    n_discarded: int
    radius: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ratios")
        return d


def feasible_perturbation(spec, op, sol, delta, repair_iters: int = 8, margin: float = 0.0):
    """``P_box(u + delta)`` pushed back into the mixed constraint; ``None`` if that fails."""
    mesh = op.mesh
    u = project_box(sol.u.values + delta, spec.a, spec.b)
    u[0] = u[1]
    for _ in range(repair_iters + 1):
        y = solve_state(spec, op, u)[0]
        h = mixed_constraint(spec, y, u, mesh)
        if float(np.max(h[1:])) <= 1e-9:
            return u, y
        u = project_box(u - np.maximum(h + margin, 0.0) / spec.eps, spec.a, spec.b)
        u[0] = u[1]
    return None


def growth_test(spec: ProblemSpec, op: EllipticOperator, sol: Solution, n_perturb: int = 100,
                radius: float = 1e-2, seed: int = 0, max_tries: int | None = None) -> GrowthReport:
    """Minimum of ``(J(u) - J(u_bar)) / ||u - u_bar||^2`` over random feasible perturbations."""
    mesh = op.mesh
    J0 = eval_objective(spec, sol.y, sol.u, mesh)
    ratios = []
    discarded = 0
    tries = max_tries or 3 * n_perturb
    for i in range(tries):
        if len(ratios) >= n_perturb:
            break
        rng = np.random.default_rng([seed, i])
        dq = rng.uniform(-radius, radius, size=(mesh.nt, mesh.n))
        delta = np.vstack([dq[:1], dq])
        res = feasible_perturbation(spec, op, sol, delta, margin=1e-2 * radius)
        if res is None:
            discarded += 1
            continue
        u, y = res
        dist2 = l2_norm_q(u - sol.u.values, mesh) ** 2
        if dist2 == 0.0:
            discarded += 1
            continue
        ratios.append((eval_objective(spec, y, u, mesh) - J0) / dist2)
    if not ratios:
        return GrowthReport(float("nan"), [], 0, discarded, radius, False)
    kappa = float(min(ratios))
    return GrowthReport(kappa, [float(r) for r in ratios], len(ratios), discarded, radius, kappa > 0)


def dense_reduced_hessian(spec: ProblemSpec, op: EllipticOperator, sol: Solution):
    """Dense Hessian of the reduced Lagrangian in the stacked control (tiny grids only).

    Returns ``(H, S)`` with ``S`` the linearized control-to-state matrix at
    ``y_bar``; ``v' H v`` equals :func:`quadratic_form` for ``z = S v``.
    """
    from .oracle import MAX_UNKNOWNS, state_matrix
    mesh = op.mesh
    if mesh.nt * mesh.n > MAX_UNKNOWNS:
        raise ValueError("dense Hessian limited to tiny grids")
    x, t = space_time(mesh)
    yv, uv = sol.y.values, sol.u.values
    S = state_matrix(op, nonlin(spec, "df", yv)[1:])
    q = lambda a: a[1:].ravel()
    Dyy = q(lagr(spec, "L_yy", x, t, yv, uv) + sol.e.values * cons(spec, "g_yy", x, t, yv)
            + sol.phi.values * nonlin(spec, "d2f", yv))
    Dyu = q(lagr(spec, "L_yu", x, t, yv, uv))
    Duu = q(lagr(spec, "L_uu", x, t, yv, uv))
    W = mesh.dt * mesh.cell_volume
    H = W * ((S.T * Dyy) @ S + S.T * Dyu + (S.T * Dyu).T + np.diag(Duu))
    return 0.5 * (H + H.T), S


def cone_span_bound(spec: ProblemSpec, op: EllipticOperator, sol: Solution, sets: ActiveSets | None = None,
                    strong_tol: float = STRONG_TOL) -> float:
    """Smallest ``v'Hv / ||v||^2`` on the subspace cut out by the strongly active constraints.

    The sampled cone lies in this subspace, so its minimum cannot be smaller.
    """
    from scipy.linalg import null_space
    sets = sets or sol.sets
    mesh = op.mesh
    x, t = space_time(mesh)
    H, S = dense_reduced_hessian(spec, op, sol)
    strong_box, M = _strong_sets(sol, sets, strong_tol)
    N = H.shape[0]
    rows = [np.eye(N)[strong_box.ravel()]]
    gy = cons(spec, "g_y", x, t, sol.y.values)[1:].ravel()
    Mf = M.ravel()
    if Mf.any():
        rows.append(gy[Mf, None] * S[Mf] + spec.eps * np.eye(N)[Mf])
    C = np.vstack(rows)
    Z = null_space(C) if C.shape[0] else np.eye(N)
    if Z.shape[1] == 0:
        return float("inf")
    W = mesh.dt * mesh.cell_volume
    return float(np.linalg.eigvalsh(Z.T @ H @ Z).min() / W)


__all__ = ["CriticalDirection", "quadratic_form", "first_order_change", "verify_direction",
           "sample_critical_direction", "SOCReport", "min_rayleigh", "GrowthReport", "growth_test",
           "feasible_perturbation", "dense_reduced_hessian", "cone_span_bound", "SamplingError",
           "TrivialConeError"]

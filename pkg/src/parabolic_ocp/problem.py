"""Control problem data, objective quadrature, hypothesis checks and the built-in catalog.

All callbacks are vectorised. Spatial callbacks receive ``x`` with the
coordinate index last (``x[..., 0]`` is the first coordinate) and
broadcastable against ``t``, ``y`` and ``u``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import Field, FieldLike, space_time, values_of
from .mesh import Coefficient, Mesh

Callback = Callable[..., np.ndarray]

DERIVATIVE_PAIRS = (
    # (derivative, base, variable) -- variable differentiated in the base callback
    ("L_y", "L", "y"), ("L_u", "L", "u"), ("L_yy", "L_y", "y"), ("L_yu", "L_y", "u"),
    ("L_uu", "L_u", "u"), ("df", "f", "y"), ("d2f", "df", "y"), ("g_y", "g", "y"),
    ("g_yy", "g_y", "y"),
)


class DerivativeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Data of the control problem.

    Minimise ``int_Q L(x,t,y,u)`` subject to ``y_t + A y + f(y) = u``,
    ``y = 0`` on the lateral boundary, ``y(0) = y0``,
    ``g(x,t,y) + eps*u <= 0`` and ``a <= u <= b``.
    """

    L: Callback
    L_y: Callback
    L_u: Callback
    L_yy: Callback
    L_yu: Callback
    L_uu: Callback
    f: Callback
    df: Callback
    d2f: Callback
    g: Callback
    g_y: Callback
    g_yy: Callback
    a: float
    b: float
    eps: float
    y0: Callback
    diffusion: Coefficient = 1.0
    T: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    validate: bool = True

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"box bounds need a < b (got a={self.a}, b={self.b})")
        if not self.eps > 0:
            raise ValueError(f"mixed-constraint weight eps must be positive (got {self.eps})")
        if self.validate:
            f0 = float(np.asarray(self.f(np.zeros(1)))[0])
            if f0 != 0.0:
                raise ValueError(f"nonlinearity must satisfy f(0) = 0 (got {f0:g})")
            check_derivatives(self)


def _bcast(out, *shapes) -> np.ndarray:
    return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast_shapes(*shapes))


def lagr(spec: ProblemSpec, name: str, x, t, y, u) -> np.ndarray:
    """Evaluate one of the ``L*`` callbacks with broadcasting."""
    return _bcast(getattr(spec, name)(x, t, y, u), x.shape[:-1], np.shape(t), np.shape(y), np.shape(u))


def cons(spec: ProblemSpec, name: str, x, t, y) -> np.ndarray:
    """Evaluate one of the ``g*`` callbacks with broadcasting."""
    return _bcast(getattr(spec, name)(x, t, y), x.shape[:-1], np.shape(t), np.shape(y))


def nonlin(spec: ProblemSpec, name: str, y) -> np.ndarray:
    return _bcast(getattr(spec, name)(y), np.shape(y))


def _sample_points(spec: ProblemSpec, n: int, rng, lengths=(1.0, 1.0)):
    x = rng.uniform(0.0, 1.0, size=(n, 2)) * np.asarray(lengths, dtype=float)
    t = rng.uniform(0.0, spec.T, size=n)
    y = rng.uniform(-2.0, 2.0, size=n)
    lo = spec.a if np.isfinite(spec.a) else -2.0
    hi = spec.b if np.isfinite(spec.b) else 2.0
    u = rng.uniform(lo, hi, size=n)
    return x, t, y, u


def check_derivatives(spec: ProblemSpec, n: int = 100, seed: int = 12345,
                      rtol: float = 1e-5) -> None:
    """Cross-check every derivative callback against central differences.

    Raises :class:`DerivativeMismatch` naming the first inconsistent callback.
    """
    rng = np.random.default_rng(seed)
    x, t, y, u = _sample_points(spec, n, rng)
    h = 1e-5

    def call(name, yy, uu):
        if name.startswith("L"):
            return lagr(spec, name, x, t, yy, uu)
        if name.startswith("g"):
            return cons(spec, name, x, t, yy)
        return nonlin(spec, name, yy)

    for deriv, base, var in DERIVATIVE_PAIRS:
        if var == "y":
            fd = (call(base, y + h, u) - call(base, y - h, u)) / (2 * h)
        else:
            fd = (call(base, y, u + h) - call(base, y, u - h)) / (2 * h)
        d = call(deriv, y, u)
        err = np.abs(fd - d) - rtol * (1.0 + np.abs(d))
        if np.any(err > 0):
            k = int(np.argmax(err))
            raise DerivativeMismatch(
                f"{deriv} disagrees with finite differences of {base} at "
                f"x={x[k]}, t={t[k]:.4g}, y={y[k]:.4g}, u={u[k]:.4g}: "
                f"callback {d[k]:.8g} vs difference {fd[k]:.8g}")


def initial_state(spec: ProblemSpec, mesh: Mesh, atol: float = 1e-12) -> np.ndarray:
    """Sample ``y0`` on interior nodes after checking it vanishes on the boundary."""
    y0 = np.broadcast_to(np.asarray(spec.y0(mesh.coords), dtype=float), (mesh.n,)).copy()
    bpts = _boundary_points(mesh)
    yb = np.broadcast_to(np.asarray(spec.y0(bpts), dtype=float), bpts.shape[:-1])
    if np.max(np.abs(yb)) > atol:
        raise ValueError(f"initial datum must vanish on the boundary (max |y0| there = {np.max(np.abs(yb)):.3g})")
    return y0


def _boundary_points(mesh: Mesh) -> np.ndarray:
    if mesh.dim == 1:
        return np.array([[0.0], [mesh.lx]])
    xs = mesh.hx * np.arange(mesh.nx + 2)
    ys = mesh.hy * np.arange(mesh.ny + 2)
    pts = [np.column_stack([xs, np.zeros_like(xs)]), np.column_stack([xs, np.full_like(xs, mesh.ly)]),
           np.column_stack([np.zeros_like(ys), ys]), np.column_stack([np.full_like(ys, mesh.lx), ys])]
    return np.vstack(pts)


def eval_objective(spec: ProblemSpec, y: FieldLike, u: FieldLike, mesh: Mesh | None = None) -> float:
    """Quadrature of ``int_Q L``: nodal sum in space, implicit-Euler levels 1..nt in time."""
    mesh = mesh or (y.mesh if isinstance(y, Field) else None)
    yv, uv = values_of(y, mesh), values_of(u, mesh)
    x, t = space_time(mesh)
    vals = lagr(spec, "L", x, t[1:], yv[1:], uv[1:])
    if not np.all(np.isfinite(vals)):
        k, i = np.argwhere(~np.isfinite(vals))[0]
        raise FloatingPointError(f"running cost is not finite at level {k + 1}, node {i} "
                                 f"(x={mesh.coords[i]}, y={yv[k + 1, i]:g}, u={uv[k + 1, i]:g})")
    return float(mesh.dt * mesh.cell_volume * np.sum(vals))


# --------------------------------------------------------------------------- hypotheses

@dataclass
class HypothesisCheck:
    passed: bool
    margin: float
    location: dict


@dataclass
class HypothesisReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, key) -> HypothesisCheck:
        return self.checks[key]

    def as_dict(self) -> dict:
        return {k: {"passed": c.passed, "margin": c.margin, "location": c.location}
                for k, c in self.checks.items()}


def check_hypotheses(spec: ProblemSpec, y_range=(-2.0, 2.0), u_range=None, samples: int = 201,
                     lengths=(1.0, 1.0), seed: int = 0) -> HypothesisReport:
    """Sample the structural hypotheses and report the worst margin of each.

    ``H2``: f(0) = 0 and f' >= 0. ``H4``: f' >= -g_y/eps >= 0.
    ``H6'``: L_uu >= gamma_1 > 0 (the margin is the sampled gamma_1).
    """
    lo, hi = y_range
    if not hi > lo:
        raise ValueError("y_range must be non-degenerate")
    if u_range is None:
        u_range = (spec.a if np.isfinite(spec.a) else -2.0, spec.b if np.isfinite(spec.b) else 2.0)
    ulo, uhi = u_range
    if not uhi > ulo:
        raise ValueError("u_range must be non-degenerate")
    rng = np.random.default_rng(seed)
    ys = np.linspace(lo, hi, samples)
    if lo < 0 < hi:
        ys = np.sort(np.append(ys, 0.0))
    checks = {}

    fp = nonlin(spec, "df", ys)
    f0 = float(nonlin(spec, "f", np.zeros(1))[0])
    k = int(np.argmin(fp))
    h2_margin = float(fp[k])
    checks["H2"] = HypothesisCheck(passed=(f0 == 0.0 and h2_margin >= 0.0), margin=h2_margin,
                                   location={"y": float(ys[k]), "f(0)": f0})

    m = ys.size
    x = rng.uniform(0.0, 1.0, size=(m, 2)) * np.asarray(lengths, dtype=float)
    t = rng.uniform(0.0, spec.T, size=m)
    gy = cons(spec, "g_y", x, t, ys)
    lower = -gy / spec.eps
    gap = fp - lower
    margins = np.minimum(gap, lower)
    k = int(np.argmin(margins))
    checks["H4"] = HypothesisCheck(passed=bool(margins[k] >= 0.0), margin=float(margins[k]),
                                   location={"x": x[k].tolist(), "t": float(t[k]), "y": float(ys[k])})

    us = rng.uniform(ulo, uhi, size=m)
    luu = lagr(spec, "L_uu", x, t, ys, us)
    k = int(np.argmin(luu))
    checks["H6'"] = HypothesisCheck(passed=bool(luu[k] > 0.0), margin=float(luu[k]),
                                    location={"x": x[k].tolist(), "t": float(t[k]), "y": float(ys[k]),
                                              "u": float(us[k])})
    return HypothesisReport(checks)


# --------------------------------------------------------------------------- catalog

def _bump(amplitude: float, lengths):
    lx, ly = (tuple(lengths) + (1.0,))[:2]

    def y0(x):
        x = np.asarray(x, dtype=float)
        val = amplitude * np.sin(np.pi * x[..., 0] / lx)
        if x.shape[-1] > 1:
            val = val * np.sin(np.pi * x[..., 1] / ly)
        return val
    return y0


def _as_xt_callable(v) -> Callable:
    if callable(v):
        return v
    c = float(v)
    return lambda x, t: np.full(np.broadcast_shapes(np.shape(x)[:-1], np.shape(t)), c)


def _tracking_cost(target: Callable, lam: float, sign: float = 1.0):
    """``L = (y - y_d)^2/2 + sign*lam*u^2/2`` and its partial derivatives."""
    s = sign * lam
    zeros = lambda x, t, y, u: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(t), np.shape(y), np.shape(u)))
    return dict(
        L=lambda x, t, y, u: 0.5 * (y - target(x, t)) ** 2 + 0.5 * s * u**2,
        L_y=lambda x, t, y, u: (y - target(x, t)) + 0.0 * u,
        L_u=lambda x, t, y, u: s * u + 0.0 * y,
        L_yy=lambda x, t, y, u: np.ones_like(zeros(x, t, y, u)),
        L_yu=zeros,
        L_uu=lambda x, t, y, u: np.full_like(zeros(x, t, y, u), s),
    )


def make_example_cubic(gamma: float = 0.1, b: float = 1.0, lam: float = 0.1,
                       y_target: float = 0.3, y0_amplitude: float = 0.1,
                       lengths=(1.0, 1.0), diffusion: Coefficient = 1.0, T: float = 1.0) -> ProblemSpec:
    """Cubic nonlinearity ``f = y^3 + y`` with ``g = -y - gamma``, ``eps = 1``, ``a = 0``.

    The tracking cost ``(y - y_target)^2/2 + lam*u^2/2`` gives ``L_uu = lam``.
    For ``0 <= u`` and ``y0 >= 0`` the state stays nonnegative, so
    ``a - u + eps*u + g <= -gamma`` along every admissible trajectory.
    """
    if not gamma > 0:
        raise ValueError(f"separation margin gamma must be positive (got {gamma})")
    if not b > 0:
        raise ValueError(f"upper bound b must be positive (got {b})")
    if not lam > 0:
        raise ValueError(f"control weight must be positive (got {lam})")
    if y0_amplitude < 0:
        raise ValueError("initial datum amplitude must be nonnegative")
    target = _as_xt_callable(y_target)
    return ProblemSpec(
        **_tracking_cost(target, lam),
        f=lambda y: y**3 + y, df=lambda y: 3 * y**2 + 1, d2f=lambda y: 6 * y,
        g=lambda x, t, y: -y - gamma + 0.0 * t,
        g_y=lambda x, t, y: -np.ones(np.broadcast_shapes(np.shape(x)[:-1], np.shape(t), np.shape(y))),
        g_yy=lambda x, t, y: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(t), np.shape(y))),
        a=0.0, b=float(b), eps=1.0, y0=_bump(y0_amplitude, lengths), diffusion=diffusion, T=float(T),
        name="cubic_example",
        params={"gamma": gamma, "b": b, "lam": lam, "y_target": y_target if not callable(y_target) else "callable",
                "y0_amplitude": y0_amplitude},
    )


def make_convex_quadratic(lam: float = 1.0, y_target=0.0, c: float = 0.0,
                          g_slope: float = 0.0, g_offset=-1.0, eps: float = 1.0,
                          a: float = -1.0, b: float = 1.0, y0_amplitude: float = 0.0,
                          lengths=(1.0, 1.0), diffusion: Coefficient = 1.0, T: float = 1.0,
                          negate_control_cost: bool = False) -> ProblemSpec:
    """Linear ``f = c*y``, affine ``g = g_slope*y + g_offset(x,t)``, quadratic tracking cost.

    The discretised problem is a convex QP (solvable exactly by
    :func:`parabolic_ocp.oracle.brute_force_oracle`). ``negate_control_cost``
    flips the sign of the control term to build a deliberately indefinite
    instance for second-order tests.
    """
    if not lam > 0:
        raise ValueError(f"control weight must be positive (got {lam})")
    if c < 0:
        raise ValueError(f"linear reaction coefficient must be nonnegative (got {c})")
    target = _as_xt_callable(y_target)
    offset = _as_xt_callable(g_offset)
    shape = lambda x, t, y: np.broadcast_shapes(np.shape(x)[:-1], np.shape(t), np.shape(y))
    return ProblemSpec(
        **_tracking_cost(target, lam, sign=-1.0 if negate_control_cost else 1.0),
        f=lambda y: c * y, df=lambda y: np.full(np.shape(y), float(c)), d2f=lambda y: np.zeros(np.shape(y)),
        g=lambda x, t, y: g_slope * y + offset(x, t),
        g_y=lambda x, t, y: np.full(shape(x, t, y), float(g_slope)),
        g_yy=lambda x, t, y: np.zeros(shape(x, t, y)),
        a=float(a), b=float(b), eps=float(eps), y0=_bump(y0_amplitude, lengths), diffusion=diffusion,
        T=float(T), name="convex_quadratic",
        params={"lam": lam, "c": c, "g_slope": g_slope, "eps": eps, "a": a, "b": b,
                "y0_amplitude": y0_amplitude, "negate_control_cost": negate_control_cost,
                "y_target": y_target if not callable(y_target) else "callable",
                "g_offset": g_offset if not callable(g_offset) else "callable"},
    )


CATALOG = {
    "cubic_example": make_example_cubic,
    "convex_quadratic": make_convex_quadratic,
}


def make_problem(name: str, **params) -> ProblemSpec:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; catalog has {sorted(CATALOG)}") from None
    return factory(**params)


def is_convex_quadratic(spec: ProblemSpec, n: int = 64, seed: int = 7, atol: float = 1e-12,
                        require_convex: bool = True) -> Optional[str]:
    """Return ``None`` if sampling finds ``f`` linear, ``g`` affine in y and ``L`` convex quadratic,
    else a reason string. With ``require_convex=False`` only the quadratic structure is checked."""
    rng = np.random.default_rng(seed)
    x, t, y, u = _sample_points(spec, n, rng)
    if np.max(np.abs(nonlin(spec, "d2f", y))) > atol:
        return "f is not linear"
    if np.ptp(nonlin(spec, "df", y)) > atol:
        return "f' is not constant"
    if np.max(np.abs(cons(spec, "g_yy", x, t, y))) > atol:
        return "g is not affine in y"
    for name in ("L_yy", "L_yu", "L_uu"):
        if np.ptp(lagr(spec, name, x, t, y, u)) > atol:
            return f"{name} is not constant"
    if not require_convex:
        return None
    lyy = float(lagr(spec, "L_yy", x, t, y, u)[0])
    lyu = float(lagr(spec, "L_yu", x, t, y, u)[0])
    luu = float(lagr(spec, "L_uu", x, t, y, u)[0])
    if luu <= 0 or lyy < 0 or lyy * luu - lyu**2 < -atol:
        return "running cost is not convex with L_uu > 0"
    return None

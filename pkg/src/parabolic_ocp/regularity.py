"""Empirical Hölder exponents and discrete maximum-principle checks.

The exponent estimator collects node pairs and groups them into dyadic
distance bins ``(r_k/2, r_k]`` with ``r_k = 2^k * d_min``, so the dyadic
axis offsets sit exactly on the bin edges. Per bin it
keeps the largest increment ``|f(p) - f(p')|`` (and, for plotting, the
distance of the pair attaining it). The running maximum over bins is the
discrete modulus of continuity ``omega(r_k) = max{|f(p) - f(p')| : d <= r_k}``,
and the exponent is the least-squares slope of ``log omega`` against
``log r``. Maxima rather than means are used because a Hölder constant bounds
the supremum, and averages drift towards the smoother bulk of the field.

Only scales ``r_k <= fit_fraction * D`` (``D`` the largest sampled distance)
enter the fit. At larger separations the increment is capped by the
oscillation of the field, and those saturated scales bend the slope down.
When fewer than three scales fall in that window, the three finest are used
and the estimate is flagged as low-confidence. ``min_scale`` drops scales
below a given distance; comparing a field across a refinement with
``min_scale`` set to the coarse spacing fits both grids over the same
physical scales.

Pairs come from two sources. Every axis-aligned pair at dyadic index offsets
``1, 2, 4, ...`` is used (this guarantees each bin contains the extreme
pairs of a one-sided singularity), plus ``n_pairs`` uniformly random pairs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .fields import Field, values_of
from .mesh import EllipticOperator, Mesh
from .pde import solve_state
from .problem import ProblemSpec, initial_state

ALPHA_MIN = 1e-3
ALPHA_MAX = 1.05


@dataclass
class HolderEstimate:
    alpha: float
    C: float
    status: str                 # "ok", "undefined" (constant field) or "empty" (no pairs)
    low_confidence: bool
    n_pairs: int
    n_bins: int
    fit_residual: float
    bins: list = field(default_factory=list, repr=False)   # (bin, distance, max_increment, count)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("bins")
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


def _node_coords(mesh: Mesh, levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Space coordinates (n, dim) and the times of the selected levels."""
    return mesh.coords, mesh.times[levels]


def _axis_pairs(mesh: Mesh, nlev: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat index pairs (into a ``(nlev, n)`` array) at dyadic offsets along each axis."""
    shape = (nlev,) + mesh.grid_shape        # (t, [y,] x)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    first, second = [], []
    for ax in range(len(shape)):
        off = 1
        while off < shape[ax]:
            a = np.take(idx, np.arange(0, shape[ax] - off), axis=ax).ravel()
            b = np.take(idx, np.arange(off, shape[ax]), axis=ax).ravel()
            first.append(a)
            second.append(b)
            off *= 2
    if not first:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(first), np.concatenate(second)


def holder_estimate(f, mesh: Mesh | None = None, n_pairs: int = 20000, seed: int = 0,
                    parabolic: bool = True, mask: np.ndarray | None = None,
                    levels: str | None = None, fit_fraction: float = 0.25,
                    min_scale: float = 0.0) -> HolderEstimate:
    """Estimate ``alpha`` and ``C`` in ``|f(p) - f(p')| <= C d(p, p')^alpha``.

    ``d = |x - x'| + |t - t'|^(1/2)`` with ``parabolic=True``, else
    ``|x - x'| + |t - t'|``. ``mask`` restricts both endpoints to a region;
    a mask of shape ``(nt, n)`` refers to levels ``1..nt``. ``levels="q"``
    drops level 0 (used for controls and multipliers).
    """
    if n_pairs < 100:
        raise ValueError("need at least 100 random pairs")
    if isinstance(f, Field):
        mesh = f.mesh
    if mesh is None:
        raise ValueError("a mesh is required for raw arrays")
    vals = values_of(f, mesh)
    lev = np.arange(mesh.nt + 1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape == (mesh.nt, mesh.n):
            levels = "q"
        elif mask.shape != (mesh.nt + 1, mesh.n):
            raise ValueError(f"mask shape {mask.shape} does not fit the mesh")
    if levels == "q":
        lev = lev[1:]
    V = vals[lev]
    keep = np.ones(V.shape, dtype=bool) if mask is None else (mask if mask.shape == V.shape else mask[lev])
    xs, ts = _node_coords(mesh, lev)
    ia, ib = _axis_pairs(mesh, len(lev))
    rng = np.random.default_rng(seed)
    total = V.size
    ra = rng.integers(0, total, size=n_pairs)
    rb = rng.integers(0, total, size=n_pairs)
    ia, ib = np.concatenate([ia, ra]), np.concatenate([ib, rb])
    kf = keep.ravel()
    sel = kf[ia] & kf[ib] & (ia != ib)
    ia, ib = ia[sel], ib[sel]
    if ia.size == 0:
        return HolderEstimate(float("nan"), float("nan"), "empty", True, 0, 0, float("nan"))
    n = mesh.n
    la, na = np.divmod(ia, n)
    lb, nb = np.divmod(ib, n)
    dx = np.abs(xs[na] - xs[nb]).sum(axis=1)
    dt = np.abs(ts[la] - ts[lb])
    d = dx + (np.sqrt(dt) if parabolic else dt)
    inc = np.abs(V.ravel()[ia] - V.ravel()[ib])
    if not np.any(inc > 0):
        return HolderEstimate(float("nan"), 0.0, "undefined", True, int(ia.size), 0, float("nan"))
    dmin = float(d.min())
    bins = np.maximum(np.ceil(np.log2(d / dmin) - 1e-9), 0).astype(np.int_)
    nb_ = int(bins.max()) + 1
    best, bdist, cnt = _backend.bin_maxima(bins, inc, d, nb_)
    omega = np.maximum.accumulate(np.where(cnt > 0, best, 0.0))
    edges = dmin * 2.0 ** np.arange(nb_)
    good = (cnt > 0) & (omega > 0) & (edges >= min_scale * (1 - 1e-9))
    small = good & (edges <= fit_fraction * float(d.max()))
    low = int(small.sum()) < 3
    if low:
        small = good & (np.cumsum(good) <= 3)
    good = small
    table = [(int(k), float(bdist[k]), float(best[k]), int(cnt[k])) for k in range(nb_) if cnt[k] > 0]
    lx, ly = np.log(edges[good]), np.log(omega[good])
    if lx.size >= 2:
        slope, icpt = np.polyfit(lx, ly, 1)
        resid = float(np.sqrt(np.mean((ly - (slope * lx + icpt)) ** 2)))
    else:
        slope, resid = ALPHA_MAX, float("nan")
    alpha = float(np.clip(slope, ALPHA_MIN, ALPHA_MAX))
    C = float(np.max(inc / d**alpha))
    return HolderEstimate(alpha, C, "ok", low, int(ia.size), int(good.sum()), resid,
                          bins=table)


def check_positive_density(domain) -> Optional[tuple[float, float]]:
    """Density constants ``(alpha*, R0)`` of a convex box domain, or ``None`` if unsupported.

    Accepts a :class:`Mesh`, or a mapping with ``shape`` in
    ``{"rectangle", "interval"}`` and side lengths ``lx`` (and ``ly``).
    For convex domains half of every small ball centred on the boundary lies
    outside, which gives ``alpha* = 1/2``; ``R0`` is half the shortest side.
    """
    if isinstance(domain, Mesh):
        sides = (domain.lx, domain.ly) if domain.dim == 2 else (domain.lx,)
    elif isinstance(domain, dict):
        shape = domain.get("shape")
        if shape == "rectangle":
            sides = (float(domain["lx"]), float(domain["ly"]))
        elif shape == "interval":
            sides = (float(domain.get("lx", domain.get("length", 1.0))),)
        else:
            return None
    else:
        return None
    if min(sides) <= 0:
        return None
    return 0.5, 0.5 * min(sides)


@dataclass
class MaxPrincipleReport:
    nonnegativity_applicable: bool
    min_state: float
    nonnegativity_ok: bool
    comparison_margins: list
    comparison_ok: bool
    tol: float

    @property
    def ok(self) -> bool:
        return self.nonnegativity_ok and self.comparison_ok

    def to_dict(self) -> dict:
        return asdict(self)


def maximum_principle_check(spec: ProblemSpec, op: EllipticOperator, y: Field, u, pairs=(),
                            tol: float = 1e-12) -> MaxPrincipleReport:
    """Nonnegativity of ``y = S(u)`` for ``u, y0 >= 0`` and ordering ``S(u1) >= S(u2)`` for ``u1 >= u2``.

    Each comparison margin is ``min(S(u1) - S(u2))``, which must be at least ``-tol``.
    Pairs that are not ordered raise ``ValueError``.
    """
    mesh = op.mesh
    uv = values_of(u, mesh)
    y0 = initial_state(spec, mesh)
    applicable = bool(np.all(uv[1:] >= 0) and np.all(y0 >= 0))
    ymin = float(np.min(values_of(y, mesh)))
    margins = []
    for u1, u2 in pairs:
        a1, a2 = values_of(u1, mesh), values_of(u2, mesh)
        if np.any(a1[1:] < a2[1:]):
            raise ValueError("comparison pair is not ordered (need u1 >= u2)")
        y1 = solve_state(spec, op, a1)[0].values
        y2 = solve_state(spec, op, a2)[0].values
        margins.append(float(np.min(y1 - y2)))
    return MaxPrincipleReport(nonnegativity_applicable=applicable, min_state=ymin,
                              nonnegativity_ok=(not applicable) or ymin >= -tol,
                              comparison_margins=margins,
                              comparison_ok=all(m >= -tol for m in margins), tol=tol)


@dataclass
class RegularityReport:
    fields: dict
    regions: dict
    density: Optional[tuple]
    parabolic: bool

    def to_dict(self) -> dict:
        return {"fields": {k: v.to_dict() for k, v in self.fields.items()},
                "regions": {k: {r: e.to_dict() for r, e in v.items()} for k, v in self.regions.items()},
                "density": None if self.density is None else {"alpha_star": self.density[0],
                                                              "R0": self.density[1]},
                "parabolic": self.parabolic}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def bin_rows(self):
        """``(field, region, bin, distance, max_increment, count)`` rows for plotting."""
        rows = []
        for name, est in self.fields.items():
            rows += [(name, "all") + b for b in est.bins]
        for name, regs in self.regions.items():
            for reg, est in regs.items():
                rows += [(name, reg) + b for b in est.bins]
        return rows


REGIONS = ("mask_a", "mask_b", "mask_0", "mask_ab")


def regularity_report(sol, n_pairs: int = 20000, seed: int = 0, parabolic: bool = True,
                      min_scale: float = 0.0) -> RegularityReport:
    """Exponents of ``y, u, phi, e, ehat`` on all of Q and of ``e, ehat`` per active region."""
    mesh = sol.mesh
    kw = dict(n_pairs=n_pairs, seed=seed, parabolic=parabolic, min_scale=min_scale)
    fields_ = {"y": holder_estimate(sol.y, **kw),
               "u": holder_estimate(sol.u, levels="q", **kw),
               "phi": holder_estimate(sol.phi, levels="q", **kw),
               "e": holder_estimate(sol.e, levels="q", **kw),
               "ehat": holder_estimate(sol.ehat, levels="q", **kw)}
    regions = {}
    for name, fld in (("e", sol.e), ("ehat", sol.ehat)):
        regions[name] = {r: holder_estimate(fld, mask=getattr(sol.sets, r), **kw) for r in REGIONS}
    return RegularityReport(fields_, regions, check_positive_density(mesh), parabolic)


__all__ = ["HolderEstimate", "holder_estimate", "check_positive_density", "MaxPrincipleReport",
           "maximum_principle_check", "RegularityReport", "regularity_report"]

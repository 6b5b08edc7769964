"""Independent numerical checks shared by the module tests and the acceptance suite."""
from __future__ import annotations

import numpy as np

from parabolic_ocp.fields import Field
from parabolic_ocp.mesh import assemble_elliptic, build_mesh
from parabolic_ocp.optimize import reduced_gradient
from parabolic_ocp.pde import solve_state
from parabolic_ocp.problem import eval_objective, make_example_cubic


def _sines(x):
    s = np.sin(np.pi * x[..., 0])
    if x.shape[-1] > 1:
        s = s * np.sin(np.pi * x[..., 1])
    return s


def manufactured_space_error(n, nt=4):
    """Max error for ``y = t*s(x)`` with the exact (continuous) forcing.

    Implicit Euler is exact for states linear in time, so only the spatial
    error remains; it should be O(h^2).
    """
    spec = make_example_cubic(y0_amplitude=0.0)
    mesh = build_mesh(2, nx=n, ny=n, nt=nt)
    op = assemble_elliptic(mesh)
    x, t = mesh.coords, mesh.times[:, None]
    s = _sines(x)
    y_ex = t * s
    u = s + t * 2 * np.pi**2 * s + y_ex**3 + y_ex
    y = solve_state(spec, op, u, newton_tol=1e-11)[0].values
    return float(np.max(np.abs(y - y_ex))), mesh.hx


def manufactured_time_error(nt, n=7):
    """Max error for ``y = t^2*s(x)`` forced through the discrete operator.

    Using ``A_h`` in the forcing removes the spatial error, leaving the
    O(dt) implicit-Euler error.
    """
    spec = make_example_cubic(y0_amplitude=0.0)
    mesh = build_mesh(2, nx=n, ny=n, nt=nt)
    op = assemble_elliptic(mesh)
    x, t = mesh.coords, mesh.times[:, None]
    s = _sines(x)
    y_ex = t**2 * s
    u = 2 * t * s + t**2 * (op.matrix @ s)[None, :] + y_ex**3 + y_ex
    y = solve_state(spec, op, u, newton_tol=1e-11)[0].values
    return float(np.max(np.abs(y - y_ex))), mesh.dt


def observed_orders(errors, sizes):
    e, h = np.asarray(errors), np.asarray(sizes)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def gradient_fd_errors(spec, op, n_dirs=20, seed=0, step=1e-4):
    """Relative errors between adjoint directional derivatives and central differences of J."""
    mesh = op.mesh
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.2, 0.8, size=(mesh.nt + 1, mesh.n))
    u[0] = u[1]
    W = mesh.dt * mesh.cell_volume
    G = reduced_gradient(spec, op, u).values
    J = lambda v: eval_objective(spec, solve_state(spec, op, v, newton_tol=1e-12, lin_tol=1e-14)[0], v, mesh)
    errs = []
    for _ in range(n_dirs):
        d = rng.standard_normal(u.shape)
        d[0] = d[1]
        adj = W * float(np.sum(G[1:] * d[1:]))
        fd = (J(u + step * d) - J(u - step * d)) / (2 * step)
        errs.append(abs(adj - fd) / abs(fd))
    return errs


def monotone_pairs(mesh, count=10, seed=0, high=2.0):
    """Random ordered control pairs ``u1 >= u2 >= 0``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        u2 = rng.uniform(0.0, high, size=(mesh.nt + 1, mesh.n))
        u1 = u2 + rng.uniform(0.0, high, size=u2.shape) * (rng.random(u2.shape) < 0.5)
        pairs.append((Field(u1, mesh), Field(u2, mesh)))
    return pairs

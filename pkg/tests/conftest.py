"""Shared fixtures and small helpers for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from parabolic_ocp.mesh import assemble_elliptic, build_mesh
from parabolic_ocp.optimize import solve_augmented_lagrangian
from parabolic_ocp.problem import make_convex_quadratic, make_example_cubic


def cos_target(amplitude):
    return lambda x, t: amplitude * np.cos(np.pi * x[..., 0]) + 0.0 * t


# Tiny convex instances (<= 200 control unknowns) with the regime each one exercises.
ORACLE_CASES = {
    "inactive": (1, dict(lam=1.0, y_target=0.5)),
    "box_lower": (1, dict(lam=0.05, y_target=-3.0)),
    # offset -2 keeps the mixed constraint away from the upper bound, so the
    # box multiplier is unique where u = b
    "box_upper": (2, dict(lam=0.05, y_target=3.0, c=1.0, g_offset=-2.0)),
    "mixed": (1, dict(lam=0.1, y_target=1.0, g_offset=-0.2)),
    "mixed_slope": (2, dict(lam=0.1, y_target=1.0, c=1.0, g_slope=-0.5, g_offset=-0.15, y0_amplitude=0.3)),
    "mixed_and_box": (1, dict(lam=0.02, y_target=cos_target(2.0), c=0.5, g_slope=-0.5, g_offset=-0.3, a=-0.5)),
}


def tiny_mesh(dim):
    return build_mesh(1, nx=7, nt=8) if dim == 1 else build_mesh(2, nx=4, ny=4, nt=6)


def oracle_case(name):
    dim, kw = ORACLE_CASES[name]
    mesh = tiny_mesh(dim)
    return make_convex_quadratic(**kw), assemble_elliptic(mesh)


@pytest.fixture(scope="session")
def cubic16():
    spec = make_example_cubic(gamma=0.1, b=1.0)
    op = assemble_elliptic(build_mesh(2, nx=16, ny=16, nt=32))
    return spec, op, solve_augmented_lagrangian(spec, op)


@pytest.fixture(scope="session")
def cubic32():
    spec = make_example_cubic(gamma=0.1, b=1.0)
    op = assemble_elliptic(build_mesh(2, nx=32, ny=32, nt=64))
    return spec, op, solve_augmented_lagrangian(spec, op)


@pytest.fixture(params=["python", "cython"])
def each_backend(request):
    from parabolic_ocp import _backend
    if request.param not in _backend.available_backends():
        pytest.skip(f"{request.param} backend not built")
    with _backend.backend(request.param):
        yield request.param


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.ACCEPTANCE):
        terminalreporter.write_line(mod.ACCEPTANCE[num])

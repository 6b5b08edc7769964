import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_ocp.fields import Field
from parabolic_ocp.mesh import build_mesh
from parabolic_ocp.regularity import check_positive_density, holder_estimate, regularity_report


@pytest.fixture(scope="module")
def line():
    return build_mesh(1, nx=255, nt=4)


def x_field(mesh, fn):
    return Field.from_function(mesh, lambda x, t: fn(x[..., 0]) + 0.0 * t)


def test_square_root_calibration(line):
    # singular point placed on a node so the smallest increments see the full cusp
    h = line.hx
    est = holder_estimate(x_field(line, lambda x: np.sqrt(np.maximum(x - h, 0.0))), n_pairs=2000)
    assert 0.45 <= est.alpha <= 0.55 and est.status == "ok"


def test_linear_calibration(line):
    est = holder_estimate(x_field(line, lambda x: x), n_pairs=2000)
    assert 0.95 <= est.alpha <= 1.05


def test_time_exponent_depends_on_metric():
    # |sqrt(t) - sqrt(s)| <= |t - s|^(1/2): exponent 1/2 in the flat metric, 1 in the parabolic one
    mesh = build_mesh(1, nx=15, nt=256)
    f = Field.from_function(mesh, lambda x, t: np.sqrt(t) + 0.0 * x[..., 0])
    assert holder_estimate(f, parabolic=False).alpha == pytest.approx(0.5, abs=0.05)
    assert holder_estimate(f, parabolic=True).alpha == pytest.approx(1.0, abs=0.05)


def test_two_dimensional_cusp():
    mesh = build_mesh(2, nx=63, ny=63, nt=2)
    f = Field.from_function(mesh, lambda x, t: np.sqrt(np.abs(x[..., 0] - 0.5)) + 0.0 * t)
    assert holder_estimate(f).alpha == pytest.approx(0.5, abs=0.05)


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-5.0, 5.0))
def test_exponent_invariant_under_affine_rescaling(scale, shift):
    mesh = build_mesh(1, nx=63, nt=2)
    base = holder_estimate(x_field(mesh, lambda x: np.abs(x - 0.5) ** 0.7), n_pairs=500)
    est = holder_estimate(x_field(mesh, lambda x: scale * np.abs(x - 0.5) ** 0.7 + shift), n_pairs=500)
    assert est.alpha == pytest.approx(base.alpha, abs=1e-6)
    assert est.C == pytest.approx(scale * base.C, rel=1e-6)


def test_fitted_constant_bounds_every_bin(line):
    f = x_field(line, lambda x: np.abs(np.sin(7 * x)) ** 0.5)
    est = holder_estimate(f, n_pairs=3000, seed=2)
    for _, dist, inc, _ in est.bins:
        assert inc <= est.C * dist**est.alpha * (1 + 1e-12)


def test_constant_field_is_undefined(line):
    est = holder_estimate(Field.constant(line, 2.0))
    assert est.status == "undefined" and np.isnan(est.alpha)
    assert json.loads(json.dumps(est.to_dict()))["alpha"] is None


def test_empty_region(line):
    est = holder_estimate(x_field(line, lambda x: x), mask=np.zeros((line.nt, line.n), dtype=bool))
    assert est.status == "empty"
    with pytest.raises(ValueError):
        holder_estimate(x_field(line, lambda x: x), mask=np.zeros((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        holder_estimate(x_field(line, lambda x: x), n_pairs=10)


def test_mask_restricts_pairs(line):
    # a jump at x = 1/2 is invisible when both endpoints stay on one side
    f = x_field(line, lambda x: (x > 0.5) * 1.0 + x)
    left = np.broadcast_to(line.coords[:, 0] < 0.5, (line.nt + 1, line.n))
    assert holder_estimate(f, mask=left).alpha == pytest.approx(1.0, abs=0.05)
    assert holder_estimate(f).alpha < 0.5


def test_estimate_is_seed_reproducible(line):
    f = x_field(line, lambda x: np.abs(x - 0.3) ** 0.6)
    a = holder_estimate(f, n_pairs=1000, seed=5)
    b = holder_estimate(f, n_pairs=1000, seed=5)
    assert (a.alpha, a.C, a.bins) == (b.alpha, b.C, b.bins)


def test_positive_density_constants():
    assert check_positive_density(build_mesh(2, lx=2.0, ly=0.5)) == (0.5, 0.25)
    assert check_positive_density({"shape": "interval", "lx": 3.0}) == (0.5, 1.5)
    assert check_positive_density({"shape": "L-shape"}) is None


def test_regularity_report_on_cubic_solution(cubic16):
    _, _, sol = cubic16
    rep = regularity_report(sol, n_pairs=5000)
    assert rep.fields["y"].status == "ok" and rep.fields["y"].alpha >= 0.4
    assert rep.fields["phi"].alpha >= 0.4
    # no box constraint is active for the constant target, so the box multiplier vanishes
    assert rep.fields["ehat"].status == "undefined"
    assert rep.regions["e"]["mask_a"].status == "empty"
    assert rep.regions["e"]["mask_0"].alpha >= 0.4
    body = json.loads(rep.to_json())
    assert set(body["fields"]) == {"y", "u", "phi", "e", "ehat"}
    assert all(len(r) == 6 for r in rep.bin_rows())

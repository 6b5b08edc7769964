import numpy as np
import pytest

from conftest import ORACLE_CASES, oracle_case, tiny_mesh
from parabolic_ocp.fields import l2_norm_q
from parabolic_ocp.mesh import assemble_elliptic
from parabolic_ocp.optimize import brute_force_oracle
from parabolic_ocp.oracle import quadratic_stationary_point
from parabolic_ocp.problem import make_convex_quadratic
from parabolic_ocp.soc import (TrivialConeError, cone_span_bound, dense_reduced_hessian,
                               feasible_perturbation, growth_test, min_rayleigh, quadratic_form,
                               sample_critical_direction, verify_direction)


@pytest.fixture(scope="module")
def mixed_box():
    spec, op = oracle_case("mixed_and_box")
    return spec, op, brute_force_oracle(spec, op)


def test_sampled_directions_satisfy_cone_conditions(mixed_box):
    spec, op, sol = mixed_box
    for i in range(10):
        d = sample_critical_direction(spec, op, sol, seed=[4, i])
        chk = verify_direction(spec, op, sol, sol.sets, d)
        assert chk["ok"], chk
        assert l2_norm_q(d.v.values, op.mesh) == pytest.approx(1.0)


def test_strongly_active_nodes_are_frozen(mixed_box):
    spec, op, sol = mixed_box
    d = sample_critical_direction(spec, op, sol, seed=11)
    strong_box = (sol.sets.mask_a | sol.sets.mask_b) & (np.abs(sol.ehat.q) > 1e-8)
    assert strong_box.any()
    assert np.all(d.v.q[strong_box] == 0.0)
    M = sol.sets.mask_0 & (sol.e.q > 1e-8)
    assert M.any()
    lin = (-0.5 * d.z.q + spec.eps * d.v.q)[M]  # g_y = -0.5
    assert np.max(np.abs(lin)) <= 1e-10


def test_quadratic_form_matches_dense_hessian(mixed_box):
    spec, op, sol = mixed_box
    H, _ = dense_reduced_hessian(spec, op, sol)
    d = sample_critical_direction(spec, op, sol, seed=5)
    v = d.v.q.ravel()
    assert quadratic_form(spec, sol.y, sol.u, sol.phi, sol.e, d) == pytest.approx(v @ H @ v, rel=1e-10)


def test_cone_minimum_bracketed_by_dense_bound(mixed_box):
    spec, op, sol = mixed_box
    rep = min_rayleigh(spec, op, sol, n_samples=100, seed=1)
    bound = cone_span_bound(spec, op, sol)
    assert rep.n_accepted == 100
    assert rep.min_value >= bound - 1e-12


@pytest.mark.parametrize("name", ["inactive", "mixed_and_box"])
def test_convex_instances_have_positive_curvature(name):
    spec, op = oracle_case(name)
    sol = brute_force_oracle(spec, op)
    lam = ORACLE_CASES[name][1]["lam"]
    rep = min_rayleigh(spec, op, sol, n_samples=50, seed=0)
    # L = (y - y_d)^2/2 + lam u^2/2 with linear f: the form is int z^2 + lam v^2 >= lam ||v||^2
    assert rep.passed and rep.min_value >= lam * (1 - 1e-9)


def test_indefinite_instance_detected():
    spec = make_convex_quadratic(lam=1.0, y_target=0.5, negate_control_cost=True, a=-10, b=10, g_offset=-100)
    op = assemble_elliptic(tiny_mesh(1))
    st = quadratic_stationary_point(spec, op)
    rep = min_rayleigh(spec, op, st, n_samples=50, seed=0)
    assert not rep.passed and rep.min_value < -0.5
    assert rep.min_value >= cone_span_bound(spec, op, st) - 1e-12


@pytest.mark.parametrize("name", ["mixed", "mixed_slope"])
def test_trivial_cone_is_reported(name):
    # every node carries a positive mixed multiplier, so the cone reduces to {0}
    spec, op = oracle_case(name)
    sol = brute_force_oracle(spec, op)
    assert (sol.sets.mask_0 & (sol.e.q > 1e-8)).all()
    with pytest.raises(TrivialConeError):
        sample_critical_direction(spec, op, sol)
    rep = min_rayleigh(spec, op, sol, n_samples=20)
    assert rep.trivial_cone and rep.passed
    assert cone_span_bound(spec, op, sol) == float("inf")


def test_min_rayleigh_is_reproducible(mixed_box):
    spec, op, sol = mixed_box
    a = min_rayleigh(spec, op, sol, n_samples=20, seed=3)
    b = min_rayleigh(spec, op, sol, n_samples=20, seed=3)
    assert a.values == b.values
    assert min_rayleigh(spec, op, sol, n_samples=20, seed=4).values != a.values
    with pytest.raises(ValueError):
        min_rayleigh(spec, op, sol, n_samples=5)


def test_growth_on_convex_instance(mixed_box):
    spec, op, sol = mixed_box
    g = growth_test(spec, op, sol, n_perturb=50, radius=1e-2, seed=2)
    assert g.passed and g.n_feasible == 50
    assert g.kappa >= 0.5 * ORACLE_CASES["mixed_and_box"][1]["lam"] - 1e-9


def test_feasible_perturbation_restores_constraints(mixed_box):
    spec, op, sol = mixed_box
    rng = np.random.default_rng(0)
    delta = rng.uniform(-0.05, 0.05, sol.u.values.shape)
    u, y = feasible_perturbation(spec, op, sol, delta, margin=1e-4)
    assert u.min() >= spec.a and u.max() <= spec.b
    assert np.max((-0.5 * y.values - 0.3 + spec.eps * u)[1:]) <= 1e-9

"""The compiled and pure-Python kernels must agree with each other and with independent solvers."""
import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from parabolic_ocp import _backend
from parabolic_ocp.mesh import assemble_elliptic, build_mesh


def step_system(dim=2, n=12, dt=0.05, seed=0):
    mesh = build_mesh(dim, nx=n, ny=n, nt=4)
    op = assemble_elliptic(mesh)
    rng = np.random.default_rng(seed)
    shift = 1.0 + rng.random(mesh.n)
    b = rng.standard_normal(mesh.n)
    return op, dt, shift, b


def test_pcg_matches_direct_solve(each_backend):
    op, dt, shift, b = step_system()
    indptr, indices, data = op.scaled(dt)
    x = np.zeros_like(b)
    it, rel, status = _backend.pcg_csr(indptr, indices, data, shift, b, x, 1e-13, 10_000)
    ref = spla.spsolve(sp.csc_matrix(dt * op.matrix + sp.diags(shift)), b)
    assert status == 0 and rel <= 1e-13
    assert np.max(np.abs(x - ref)) <= 1e-11 * np.max(np.abs(ref))


def test_pcg_zero_rhs_returns_zero(each_backend):
    op, dt, shift, b = step_system(dim=1)
    x = np.ones_like(b)
    it, rel, status = _backend.pcg_csr(*op.scaled(dt), shift, np.zeros_like(b), x, 1e-12, 100)
    assert (it, status) == (0, 0) and not x.any()


def test_pcg_reports_indefinite_matrix(each_backend):
    op, dt, _, b = step_system(dim=1)
    shift = np.full(b.size, -10.0)  # dt*A - 10 I has negative eigenvalues
    x = np.zeros_like(b)
    _, _, status = _backend.pcg_csr(*op.scaled(dt), shift, b, x, 1e-12, 1000)
    assert status == 2


def test_pcg_budget_exhaustion(each_backend):
    op, dt, shift, b = step_system(n=20)
    x = np.zeros_like(b)
    _, rel, status = _backend.pcg_csr(*op.scaled(1.0), shift, b, x, 1e-14, 2)
    assert status == 1 and rel > 1e-14


def brute_bin_maxima(bins, inc, dist, nbins):
    best = np.full(nbins, -1.0)
    bdist = np.zeros(nbins)
    cnt = np.zeros(nbins, dtype=np.int64)
    for b, v, d in zip(bins, inc, dist):
        if not 0 <= b < nbins:
            continue
        cnt[b] += 1
        if v > best[b] or (v == best[b] and d < bdist[b]):
            best[b], bdist[b] = v, d
    return best, bdist, cnt


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-1, 6), st.sampled_from([0.0, 0.25, 0.5, 1.0]),
                          st.floats(0.0, 1.0)), max_size=80))
def test_bin_maxima_backends_agree_with_brute_force(triples):
    bins = np.array([t[0] for t in triples], dtype=np.int_)
    inc = np.array([t[1] for t in triples], dtype=float)
    dist = np.array([t[2] for t in triples], dtype=float)
    ref = brute_bin_maxima(bins, inc, dist, 6)
    for name in _backend.available_backends():
        with _backend.backend(name):
            got = _backend.bin_maxima(bins, inc, dist, 6)
        for g, r in zip(got, ref):
            np.testing.assert_array_equal(g, r)


def test_backend_switching():
    assert "python" in _backend.available_backends()
    prev = _backend.get_backend()
    with _backend.backend("python"):
        assert _backend.get_backend() == "python"
    assert _backend.get_backend() == prev
    with pytest.raises(ValueError):
        _backend.set_backend("fortran")


def test_solver_results_identical_across_backends():
    from parabolic_ocp.pde import solve_state
    from parabolic_ocp.problem import make_example_cubic
    if len(_backend.available_backends()) < 2:
        pytest.skip("only one backend available")
    op = assemble_elliptic(build_mesh(2, nx=8, ny=8, nt=8))
    spec = make_example_cubic()
    u = np.full((9, op.mesh.n), 0.7)
    ys = []
    for name in ("python", "cython"):
        with _backend.backend(name):
            ys.append(solve_state(spec, op, u)[0].values)
    assert np.max(np.abs(ys[0] - ys[1])) <= 1e-13

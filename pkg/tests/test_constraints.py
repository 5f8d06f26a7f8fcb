import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpfem import assembly
from ocpfem.constraints import BoxBounds, InfeasibleBoundsError, complementarity_residual, solve_constrained
from ocpfem.mesh import uniform_box_mesh, uniform_interval_mesh
from ocpfem.state import H1Const, build_system
from ocpfem.targets import get_target

T1 = get_target("target1")


def mesh1d(n=64):
    return uniform_interval_mesh(0, 1, n)


def test_inactive_bounds_give_unconstrained_solution():
    m = mesh1d()
    st_ = solve_constrained(m, T1, BoxBounds(-10.0, 10.0))
    sys_ = build_system(m, H1Const(st_.rho))
    load = assembly.assemble_load(m, T1, interior=True)
    ref = np.linalg.solve(sys_.dense(), load)
    assert np.max(np.abs(st_.y - ref)) <= 1e-10
    assert np.all(st_.lam == 0) and st_.active_plus.size == 0 and st_.active_minus.size == 0


def test_upper_bound_active():
    m = mesh1d()
    st_ = solve_constrained(m, T1, BoxBounds(-np.inf, 0.5))
    assert np.all(st_.y <= 0.5 + 1e-12)
    assert st_.active_plus.size > 0
    assert np.all(st_.lam[st_.active_plus] <= 0)
    free = np.setdiff1d(np.arange(m.n_interior), st_.active_plus)
    assert np.all(st_.lam[free] == 0)
    assert st_.residual <= 1e-10


def test_zero_bounds_give_zero_state():
    m = mesh1d(32)
    st_ = solve_constrained(m, T1, BoxBounds(0.0, 0.0))
    load = assembly.assemble_load(m, T1, interior=True)
    assert np.all(st_.y == 0)
    np.testing.assert_allclose(st_.lam, -load, atol=1e-14)


@pytest.mark.parametrize("c", [1.0, 10.0, 100.0])
def test_solution_independent_of_c(c):
    m = mesh1d()
    ref = solve_constrained(m, T1, BoxBounds(-0.1, 0.5), c=1.0)
    st_ = solve_constrained(m, T1, BoxBounds(-0.1, 0.5), c=c)
    assert np.max(np.abs(st_.y - ref.y)) <= 1e-9
    np.testing.assert_array_equal(st_.active_plus, ref.active_plus)


@settings(max_examples=15, deadline=None)
@given(gp=st.floats(0.05, 1.2), gm=st.floats(-1.0, 0.0), n=st.sampled_from([16, 32, 64]),
       name=st.sampled_from(["target1", "target2", "target3"]))
def test_feasibility_and_finite_termination(gp, gm, n, name):
    m = mesh1d(n)
    st_ = solve_constrained(m, get_target(name), BoxBounds(gm, gp))
    assert st_.newton_iterations <= 30
    assert np.all(st_.y <= gp + 1e-12) and np.all(st_.y >= gm - 1e-12)
    assert st_.residual <= 1e-10


def test_residual_detects_perturbation():
    m = mesh1d()
    st_ = solve_constrained(m, T1, BoxBounds(-np.inf, 0.5))
    A = build_system(m, H1Const(st_.rho)).S
    load = assembly.assemble_load(m, T1, interior=True)
    g_minus, g_plus = BoxBounds(-np.inf, 0.5).nodal(m)
    y = st_.y.copy()
    y[m.n_interior // 3] += 1e-3
    assert complementarity_residual(A, load, y, st_.lam, g_minus, g_plus, 1.0) > 1e-6


def test_infeasible_bounds_rejected():
    m = mesh1d(8)
    with pytest.raises(InfeasibleBoundsError):
        solve_constrained(m, T1, BoxBounds(0.5, 0.2))
    with pytest.raises(InfeasibleBoundsError):
        solve_constrained(m, T1, BoxBounds(0.1, 1.0))
    with pytest.raises(ValueError):
        solve_constrained(m, T1, BoxBounds(), c=0.0)
    with pytest.raises(ValueError):
        solve_constrained(m, None)


def test_nodal_bounds_and_callables():
    m = mesh1d(16)
    x = m.nodes[:, 0]
    st_arr = solve_constrained(m, T1, BoxBounds(-1.0, 0.3 + 0.2 * x))
    st_fun = solve_constrained(m, T1, BoxBounds(-1.0, lambda p: 0.3 + 0.2 * p[:, 0]))
    np.testing.assert_array_equal(st_arr.y, st_fun.y)
    assert np.all(st_arr.y <= 0.3 + 0.2 * x[m.interior] + 1e-12)
    with pytest.raises(ValueError):
        BoxBounds(-1.0, np.ones(3)).nodal(m)


@pytest.mark.parametrize("d,n", [(1, 64), (2, 16)])
def test_error_bound_for_feasible_target(d, n):
    """||y - ybar||_M <= sqrt(rho) |ybar|_K when the nodal target satisfies the bounds."""
    m = uniform_box_mesh(0, 1, n, d)
    x = m.nodes
    ybar = np.prod(np.sin(2 * np.pi * x), axis=1)
    yb = ybar[m.interior]
    # bounds touch the target's extrema, so ybar is feasible but barely
    bounds = BoxBounds(yb.min(), yb.max())
    rho = (1.0 / n) ** 2
    sys_ = build_system(m, H1Const(rho))
    load = sys_.M @ yb
    st_ = solve_constrained(m, bounds=bounds, rho=rho, load=load)
    e = st_.y - yb
    assert np.sqrt(e @ (sys_.M @ e)) <= np.sqrt(rho) * np.sqrt(yb @ (sys_.K @ yb)) * (1 + 1e-8)


def test_2d_peak_with_bounds():
    m = uniform_box_mesh(-1, 1, 16, 2)
    st_ = solve_constrained(m, get_target("peak2d"), BoxBounds(-0.05, 0.05))
    assert st_.active_plus.size > 0
    assert st_.residual <= 1e-10
    assert np.all(np.abs(st_.y) <= 0.05 + 1e-12)

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from ocpfem import assembly
from ocpfem.assembly import (assemble_dual_mass, assemble_load, assemble_lumped_mass, assemble_mass,
                             assemble_scaled_mass, assemble_stiffness, dual_element_matrix, mass_element_matrix,
                             target_moments)
from ocpfem.mesh import Mesh, UnsupportedDimensionError, uniform_box_mesh, uniform_interval_mesh
from ocpfem.quadrature import BoxInterface, SphereInterface, integrate_elements, red_children, simplex_rule
from ocpfem.targets import constant_target, get_target

SMALL = {1: 20, 2: 8, 3: 4}  # at most 200 interior dofs


def one_element(d):
    m = uniform_box_mesh(0, 1, 1, d)
    return Mesh(d, m.nodes, m.elements[:1], m.boundary_mask)


def test_mass_element_1d():
    h = 0.25
    M = assemble_mass(uniform_interval_mesh(0, h, 1)).toarray()
    np.testing.assert_allclose(M, h / 6 * np.array([[2, 1], [1, 2]]), rtol=1e-15)


def test_stiffness_element_1d():
    h = 0.125
    K = assemble_stiffness(uniform_interval_mesh(0, h, 1)).toarray()
    np.testing.assert_allclose(K, 1 / h * np.array([[1, -1], [-1, 1]]), rtol=1e-15)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_mass_partition_of_unity(d):
    m = uniform_box_mesh(-1, 1, 3, d)
    M = assemble_mass(m)
    one = np.ones(m.n_nodes)
    assert abs(one @ (M @ one) - 2.0**d) <= 1e-12 * 2.0**d
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), assemble_lumped_mass(m), rtol=1e-13)
    assert assemble_lumped_mass(m).sum() == pytest.approx(2.0**d, rel=1e-13)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_stiffness_kernel_and_symmetry(d):
    m = uniform_box_mesh(0, 1, 3, d)
    K = assemble_stiffness(m)
    assert np.max(np.abs(K @ np.ones(m.n_nodes))) <= 1e-12
    assert abs(K - K.T).max() <= 1e-14 * abs(K).max()


@pytest.mark.parametrize("d", [1, 2, 3])
def test_element_matrix_definiteness(d):
    Me = assemble_mass(one_element(d)).toarray()
    Ke = assemble_stiffness(one_element(d)).toarray()
    Ke = Ke[np.ix_(*[np.unique(one_element(d).elements)] * 2)]
    Me = Me[np.ix_(*[np.unique(one_element(d).elements)] * 2)]
    assert np.linalg.eigvalsh(Me).min() > 0
    lam = np.linalg.eigvalsh(Ke)
    assert abs(lam[0]) <= 1e-14 * lam[-1] and lam[1] > 1e-10 * lam[-1]
    np.testing.assert_allclose(Ke @ np.ones(d + 1), 0, atol=1e-14)


def test_lumped_interior_entry_1d():
    m = uniform_interval_mesh(0, 1, 8)
    np.testing.assert_allclose(assemble_lumped_mass(m, interior=True), 1 / 8, rtol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_lumped_dominates_mass(d):
    m = uniform_box_mesh(0, 1, {1: 40, 2: 6, 3: 3}[d], d)
    M = assemble_mass(m, interior=True).toarray()
    L = assemble_lumped_mass(m, interior=True)
    assert np.linalg.eigvalsh(np.diag(L) - M).min() >= -1e-14


@pytest.mark.parametrize("d", [1, 2, 3])
def test_spectral_lower_bound_of_mass(d):
    m = uniform_box_mesh(0, 1, SMALL[d], d)
    assert m.n_interior <= 200
    M = assemble_mass(m, interior=True).toarray()
    s = 1 / np.sqrt(assemble_lumped_mass(m, interior=True))
    lam = np.linalg.eigvalsh(s[:, None] * M * s[None, :])
    assert lam.min() >= 1 / (d + 2) - 1e-10
    assert lam.max() <= 1 + 1e-12


def test_scaled_mass():
    m = uniform_box_mesh(0, 1, 4, 2)
    M = assemble_mass(m)
    assert abs(assemble_scaled_mass(m, 1.0) - M).max() == 0
    w = m.element_size**-4.0
    np.testing.assert_allclose(assemble_scaled_mass(m, w).toarray(), m.global_h**-4 * M.toarray(), rtol=1e-13)
    h = 0.5
    Me = assemble_scaled_mass(uniform_interval_mesh(0, h, 1), 1 / h**4).toarray()
    np.testing.assert_allclose(Me, h**-4 * h / 6 * np.array([[2, 1], [1, 2]]), rtol=1e-15)


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 3), c=st.floats(1e-6, 1e6))
def test_stiffness_scaling(d, c):
    m = uniform_box_mesh(0, 1, 3, d)
    K = assemble_stiffness(m).toarray()
    Kc = assemble_stiffness(m, coeff=np.full(m.n_elements, c)).toarray()
    np.testing.assert_allclose(Kc, c * K, rtol=1e-13, atol=1e-13 * c * np.abs(K).max())


def test_variable_coefficient_on_uniform_mesh():
    m = uniform_box_mesh(0, 1, 4, 3)
    h = m.global_h
    np.testing.assert_allclose(assemble_stiffness(m, coeff=m.element_size**2).toarray(),
                               h**2 * assemble_stiffness(m).toarray(), rtol=1e-13, atol=1e-15)


def test_coefficient_must_be_positive():
    m = uniform_interval_mesh(0, 1, 2)
    with pytest.raises(ValueError):
        assemble_stiffness(m, coeff=np.array([1.0, -1.0]))


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("n", [4, 5])
def test_structured_fast_path_matches_element_loop(d, n):
    m = uniform_box_mesh(-1, 1, n, d)
    c = np.ones(m.n_elements)
    for kind in ("mass", "stiffness"):
        fast = assembly._assemble(m, kind, c, True)
        slow = assembly.restrict(assembly._assemble_elements(m, kind, c), m)
        assert abs(fast - slow).max() <= 1e-14 * abs(slow).max()


def test_dual_element_matrices_exact():
    # dyadic measures make the scaling by |tau| exact
    for d, ref in ((1, np.array([[3, 1], [1, 3]]) / 8),
                   (2, np.array([[22, 7, 7], [7, 22, 7], [7, 7, 22]]) / 108)):
        np.testing.assert_array_equal(dual_element_matrix(d), ref)
        el = one_element(d)
        tau = el.measures[0]
        A = assemble_dual_mass(el).toarray()
        idx = el.elements[0]
        np.testing.assert_array_equal(A[np.ix_(idx, idx)] / tau, ref)


def test_dual_element_eigenvalues_1d():
    lam = np.linalg.eigvalsh(dual_element_matrix(1))
    np.testing.assert_allclose(lam, [1 / 4, 1 / 2], rtol=1e-15)


def test_dual_mass_3d_unsupported():
    with pytest.raises(UnsupportedDimensionError):
        assemble_dual_mass(uniform_box_mesh(0, 1, 1, 3))


@pytest.mark.parametrize("d,c_low", [(1, 1 / 2), (2, 5 / 12)])
def test_dual_mass_bounds(d, c_low):
    m = uniform_box_mesh(0, 1, {1: 30, 2: 7}[d], d)
    Mt = assemble_dual_mass(m, interior=True)
    L = assemble_lumped_mass(m, interior=True)
    X = np.random.default_rng(7).standard_normal((1000, m.n_interior))
    q_t = np.einsum("ij,ij->i", X, (Mt @ X.T).T)
    q_l = (X**2) @ L
    assert np.all(c_low * q_l <= q_t * (1 + 1e-12))
    assert np.all(q_t <= q_l * (1 + 1e-12))


def test_dual_mass_row_sums_are_dual_measures():
    from ocpfem.mesh import dual_cell_measures
    m = uniform_box_mesh(0, 1, 5, 2)
    np.testing.assert_allclose(np.asarray(assemble_dual_mass(m).sum(axis=1)).ravel(), dual_cell_measures(m),
                               rtol=1e-13)


def test_load_zero_and_constant():
    m = uniform_interval_mesh(0, 1, 8)
    assert np.all(assemble_load(m, constant_target(0.0)) == 0)
    b = assemble_load(m, constant_target(1.0))
    np.testing.assert_allclose(b[1:-1], 1 / 8, rtol=1e-14)
    np.testing.assert_allclose(b[[0, -1]], 1 / 16, rtol=1e-14)


def test_load_quadratic_target_exact():
    m = uniform_interval_mesh(0, 1, 10)
    b = assemble_load(m, get_target("target1"))
    x = m.nodes[:, 0]
    for j in range(1, 10):
        hat = lambda t: max(0.0, 1 - abs(t - x[j]) * 10)
        ref = quad(lambda t: 4 * t * (1 - t) * hat(t), x[j - 1], x[j + 1], points=[x[j]], epsabs=1e-15)[0]
        assert abs(b[j] - ref) <= 1e-12


@pytest.mark.parametrize("name,exact", [("target2", 0.25), ("target3", 0.5)])
def test_load_of_nonsmooth_targets_sums_to_integral(name, exact):
    m = uniform_interval_mesh(0, 1, 7)  # no node on the kinks or jumps
    assert assemble_load(m, get_target(name)).sum() == pytest.approx(exact, abs=1e-10)


def test_pedestal_load_integral_2d():
    m = uniform_box_mesh(-1, 1, 7, 2)
    b, nsq = target_moments(m, get_target("pedestal", 2))
    assert b.sum() == pytest.approx(1.0, abs=1e-3)
    assert nsq == pytest.approx(1.0, abs=1e-3)


def test_target_moments_agree_with_load_and_error():
    m = uniform_interval_mesh(0, 1, 9)
    t = get_target("target3")
    b, nsq = target_moments(m, t)
    np.testing.assert_allclose(b, assemble_load(m, t), rtol=1e-14)
    assert nsq == pytest.approx(assembly.l2_norm_target(m, t) ** 2, rel=1e-12)
    y = np.sin(np.pi * m.nodes[:, 0])
    M = assemble_mass(m)
    e = assembly.l2_error_expanded(y @ M @ y, y @ b, nsq)
    assert e == pytest.approx(assembly.l2_error(m, y, t), rel=1e-9)


def test_l2_error_examples():
    m = uniform_interval_mesh(0, 1, 4)
    assert assembly.l2_error(m, np.zeros(5), constant_target(1.0)) == pytest.approx(1.0, rel=1e-14)
    errs = []
    for n in (8, 16, 32):
        m = uniform_interval_mesh(0, 1, n)
        t = get_target("target1")
        errs.append(assembly.l2_error(m, m.interpolate(t), t))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(rates, 2.0, atol=0.02)


def test_load_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble_load(uniform_box_mesh(0, 1, 2, 2), get_target("target1"))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_quadrature_rule_exact_for_degree_five(d):
    bary, w = simplex_rule(d, 5)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    # int over the reference simplex of lambda_0^a lambda_1^b = a! b! d! / (a+b+d)!
    from math import factorial
    for a, b in ((5, 0), (2, 3), (1, 1), (4, 1)):
        exact = factorial(a) * factorial(b) * factorial(d) / factorial(a + b + d)
        assert np.sum(w * bary[:, 0] ** a * bary[:, 1] ** b) == pytest.approx(exact, rel=1e-13)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_red_children_partition(d):
    ch = red_children(d)
    assert ch.shape == (2**d, d + 1, d + 1)
    # in barycentric coordinates each child has 1/2^d of the parent volume
    np.testing.assert_allclose(np.abs(np.linalg.det(ch)), 0.5**d, rtol=1e-14)
    np.testing.assert_allclose(ch.sum(axis=2), 1.0)


def test_interfaces():
    V = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    assert SphereInterface((0.0, 0.0), 0.5).straddles(V)[0]
    assert not SphereInterface((5.0, 5.0), 0.5).straddles(V)[0]
    assert BoxInterface((0.2, 0.2), (3.0, 3.0)).straddles(V)[0]
    assert not BoxInterface((-1.0, -1.0), (3.0, 3.0)).straddles(V)[0]
    assert BoxInterface(0.5, 0.5).straddles(np.array([[[0.0], [1.0]]]))[0]


def test_integrate_elements_vector_valued():
    m = uniform_box_mesh(0, 1, 2, 2)
    out = integrate_elements(m, lambda ids, x, bary: np.stack([np.ones(x.shape[:2]), x[..., 0]], axis=2))
    assert out.shape == (m.n_elements, 3, 2)
    assert out[..., 0].sum() == pytest.approx(1.0, rel=1e-14)
    assert out[..., 1].sum() == pytest.approx(0.5, rel=1e-14)


def test_inclusions_target_values():
    t = get_target("inclusions")
    pts = np.array([[0.5, 0.5, 0.5], [0.5, 0.25, 0.75], [0.5, 0.75, 0.75], [0.5, 0.75, 0.25],
                    [0.3, 0.47, 0.2], [0.5, 0.25, 0.25], [0.05, 0.05, 0.05]])
    np.testing.assert_array_equal(t(pts), [1, 2, 3, 4, 5, 6, 0])


def test_unknown_target():
    with pytest.raises(KeyError):
        get_target("nope")


def test_interior_restriction_matches_slicing():
    m = uniform_box_mesh(0, 1, 3, 2)
    M = assemble_mass(m)
    Mi = assemble_mass(m, interior=True)
    assert abs(Mi - M[m.interior][:, m.interior]).max() <= 1e-15
    assert sp.isspmatrix_csr(Mi)

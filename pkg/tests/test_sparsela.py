import io

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ocpfem.assembly import assemble_lumped_mass, assemble_mass, assemble_stiffness
from ocpfem.mesh import uniform_box_mesh, uniform_interval_mesh
from ocpfem.sparsela import (IndefiniteOperatorError, Operator, SolverError, as_operator, compose_schur_L2,
                             csr_matvec, is_symmetric, pcg, power_iteration, write_coo)


def spd_matrix(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


def test_matvec_examples():
    x = np.arange(5.0)
    np.testing.assert_array_equal(csr_matvec(sp.identity(5, format="csr"), x), x)
    K = assemble_stiffness(uniform_interval_mesh(0, 1, 2), interior=True)
    np.testing.assert_allclose(csr_matvec(K, np.array([1.0])), [4.0])
    np.testing.assert_array_equal(csr_matvec(sp.csr_matrix((3, 3)), np.ones(3)), np.zeros(3))
    with pytest.raises(ValueError):
        csr_matvec(sp.identity(3, format="csr"), np.ones(4))


def test_csr_structure():
    M = assemble_mass(uniform_box_mesh(0, 1, 3, 2))
    assert np.all(np.diff(M.indptr) >= 0)
    for i in range(M.shape[0]):
        cols = M.indices[M.indptr[i]:M.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)
    assert is_symmetric(M)
    assert not is_symmetric(sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]])))


def test_matvec_is_deterministic():
    M = assemble_mass(uniform_box_mesh(0, 1, 6, 3))
    x = np.random.default_rng(1).standard_normal(M.shape[0])
    assert np.array_equal(M @ x, M @ x)


def test_pcg_identity_one_iteration():
    b = np.random.default_rng(0).standard_normal(7)
    x, rep = pcg(np.eye(7), lambda r: r, b)
    np.testing.assert_allclose(x, b)
    assert rep.iterations == 1 and rep.converged


def test_pcg_exact_preconditioner():
    A = np.diag([1.0, 4.0])
    x, rep = pcg(A, lambda r: r / np.array([1.0, 4.0]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(x, [1.0, 0.25])
    assert rep.iterations == 1


def test_pcg_exact_start():
    A = spd_matrix(6, 0)
    xs = np.arange(6.0)
    x, rep = pcg(A, lambda r: r, A @ xs, x0=xs)
    assert rep.iterations == 0 and rep.converged
    np.testing.assert_array_equal(x, xs)


def test_pcg_report_consistency():
    A = spd_matrix(30, 2)
    b = np.ones(30)
    x, rep = pcg(A, lambda r: r / np.diag(A), b, tol=1e-8)
    h = rep.preconditioned_residual_history
    assert len(h) == rep.iterations + 1
    assert rep.converged == (h[-1] <= 1e-8 * h[0])
    np.testing.assert_allclose(A @ x, b, rtol=1e-6)


def test_pcg_not_converged_flag():
    A = spd_matrix(40, 3)
    _, rep = pcg(A, lambda r: r, np.ones(40), tol=1e-14, max_it=2)
    assert not rep.converged and rep.iterations == 2


def test_pcg_detects_indefinite():
    with pytest.raises(IndefiniteOperatorError):
        pcg(np.diag([1.0, -1.0]), lambda r: r, np.array([1.0, 1.0]))
    with pytest.raises(SolverError):
        pcg(np.eye(2), lambda r: r * np.nan, np.ones(2))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 10_000))
def test_pcg_energy_error_bound(n, seed):
    """A-norm error obeys the classical 2 q^k bound with q from cond(C^-1 A)."""
    A = spd_matrix(n, seed)
    d = np.diag(A).copy()
    rng = np.random.default_rng(seed + 1)
    b = rng.standard_normal(n)
    xs = np.linalg.solve(A, b)
    lam = np.linalg.eigvalsh(A / np.sqrt(d)[:, None] / np.sqrt(d)[None, :])
    kappa = lam[-1] / lam[0]
    q = (np.sqrt(kappa) - 1) / (np.sqrt(kappa) + 1)
    e0 = np.sqrt(xs @ A @ xs)
    for k in (1, 2, 4):
        x, rep = pcg(A, lambda r: r / d, b, tol=0.0, max_it=k) if k <= n else (xs, None)
        e = x - xs
        assert np.sqrt(e @ A @ e) <= 2 * q**k * e0 * (1 + 1e-8) + 1e-12


def test_as_operator():
    A = spd_matrix(3, 0)
    x = np.ones(3)
    np.testing.assert_allclose(as_operator(A) @ x, A @ x)
    op = as_operator(lambda v: 2 * v, 3)
    assert op.n == 3 and np.allclose(op @ x, 2 * x)
    with pytest.raises(TypeError):
        as_operator(42)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_operator_linearity(a, b, seed):
    m = uniform_interval_mesh(0, 1, 8)
    K = assemble_stiffness(m, interior=True)
    M = assemble_mass(m, interior=True)
    S = compose_schur_L2(K, 1 / assemble_lumped_mass(m, interior=True), M, 1e-3)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, K.shape[0]))
    lhs = S @ (a * x + b * y)
    rhs = a * (S @ x) + b * (S @ y)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))


def test_schur_rho_zero_is_mass():
    m = uniform_box_mesh(0, 1, 4, 2)
    K = assemble_stiffness(m, interior=True)
    M = assemble_mass(m, interior=True)
    S = compose_schur_L2(K, 1 / assemble_lumped_mass(m, interior=True), M, 0.0)
    np.testing.assert_allclose(S.to_dense(), M.toarray(), atol=1e-14, rtol=0)


def test_schur_dense_composition_and_symmetry():
    m = uniform_interval_mesh(0, 1, 4)
    h = 0.25
    K = assemble_stiffness(m, interior=True).toarray()
    M = assemble_mass(m, interior=True).toarray()
    L = assemble_lumped_mass(m, interior=True)
    S = compose_schur_L2(sp.csr_matrix(K), 1 / L, sp.csr_matrix(M), h**4)
    dense = M + h**4 * K @ np.diag(1 / L) @ K
    np.testing.assert_allclose(S.to_dense(), dense, rtol=1e-14, atol=1e-16)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 3))
    assert abs((S @ x) @ y - x @ (S @ y)) <= 1e-12 * abs(x @ (S @ y)) + 1e-15


def test_schur_rejects_bad_input():
    I = sp.identity(2, format="csr")
    with pytest.raises(ValueError):
        compose_schur_L2(I, np.ones(2), I, -1.0)
    with pytest.raises(ValueError):
        compose_schur_L2(I, np.array([1.0, 0.0]), I, 1.0)


def test_power_iteration():
    A = np.diag([1.0, 2.0, 7.0])
    assert power_iteration(lambda v: A @ v, 3) == pytest.approx(7.0, rel=1e-8)
    assert power_iteration(lambda v: 0 * v, 3) == 0.0


def test_operator_helpers():
    D = Operator.diagonal_inverse([2.0, 4.0])
    np.testing.assert_allclose(D @ np.array([2.0, 4.0]), [1.0, 1.0])
    np.testing.assert_allclose(Operator.from_matrix(np.eye(2) * 3).to_dense(), 3 * np.eye(2))


def test_write_coo_sorted():
    buf = io.StringIO()
    write_coo(sp.csr_matrix(np.array([[0.0, 2.0], [1.5, 0.0]])), buf)
    assert buf.getvalue() == "0 1 2\n1 0 1.5\n"

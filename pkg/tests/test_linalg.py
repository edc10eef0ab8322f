import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cardiomech.linalg import (
    FactorizationError,
    IluPreconditioner,
    SolverError,
    as_csr,
    gmres,
    ilu_factor,
    solve_triangular,
    write_matrix_market,
)


def tridiag(n, a=-1.0, b=2.0, c=-1.0):
    return sp.diags([a * np.ones(n - 1), b * np.ones(n), c * np.ones(n - 1)], [-1, 0, 1], format="csr")


def random_nonsymmetric(n, density, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    A = A + sp.diags(np.abs(A).sum(axis=1).A1 + 1.0)
    return as_csr(A)


# -- gmres ------------------------------------------------------------------

def test_gmres_identity_one_iteration():
    rhs = np.random.default_rng(0).normal(size=30)
    res = gmres(sp.identity(30, format="csr"), rhs, tol=1e-12)
    assert res.converged
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, rhs, atol=1e-14)


def test_gmres_2x2_closed_form():
    # [[4,1],[1,3]]^-1 [1,2] = [1/11, 7/11]
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    res = gmres(A, np.array([1.0, 2.0]), tol=1e-14)
    np.testing.assert_allclose(res.x, [1 / 11, 7 / 11], atol=1e-12)


def test_gmres_diagonal():
    d = np.arange(1.0, 101.0)
    res = gmres(sp.diags(d, format="csr"), np.ones(100), tol=1e-10, max_iters=500)
    assert res.converged
    np.testing.assert_allclose(res.x, 1.0 / d, rtol=1e-8)


def test_gmres_matrix_free_callable():
    A = random_nonsymmetric(60, 0.1, 3)
    b = np.ones(60)
    res = gmres(lambda v: A @ v, b, tol=1e-10, max_iters=200)
    assert res.converged
    np.testing.assert_allclose(A @ res.x, b, atol=1e-8)


@pytest.mark.parametrize("tol", [1e-4, 1e-8, 1e-11])
def test_gmres_true_residual_within_twice_tol(tol):
    A = random_nonsymmetric(200, 0.03, 5)
    b = np.random.default_rng(1).normal(size=200)
    res = gmres(A, b, tol=tol, max_iters=2000, restart=20)
    assert res.converged
    true = np.linalg.norm(b - A @ res.x) / np.linalg.norm(b)
    assert true <= 2 * tol


def test_gmres_spd_residual_history_non_increasing():
    A = tridiag(300) + 0.01 * sp.identity(300)
    b = np.random.default_rng(2).normal(size=300)
    res = gmres(A, b, tol=1e-10, max_iters=3000, restart=30)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_gmres_reports_max_iters_failure():
    res = gmres(tridiag(400), np.ones(400), tol=1e-12, max_iters=5, restart=5)
    assert not res.converged
    assert res.status == "max_iters"
    assert res.iterations == 5


def test_gmres_nonfinite_input_fails_immediately():
    b = np.ones(4)
    b[2] = np.nan
    with pytest.raises(SolverError):
        gmres(np.eye(4), b)
    with pytest.raises(SolverError):
        gmres(lambda v: np.full_like(v, np.inf), np.ones(4))


def test_gmres_singular_reports_stagnation():
    # consistent direction missing from the range: breakdown before convergence
    A = np.diag([1.0, 2.0, 0.0])
    res = gmres(A, np.array([1.0, 1.0, 1.0]), tol=1e-10, max_iters=50)
    assert not res.converged
    assert res.status == "stagnation"


def test_preconditioned_and_plain_agree():
    A = random_nonsymmetric(300, 0.02, 7)
    b = np.random.default_rng(3).normal(size=300)
    tol = 1e-9
    plain = gmres(A, b, tol=tol, max_iters=3000)
    pre = gmres(A, b, tol=tol, max_iters=3000, precond=ilu_factor(A, 1e-3, 10))
    assert plain.converged and pre.converged
    scale = np.linalg.norm(plain.x)
    assert np.linalg.norm(plain.x - pre.x) <= 10 * tol * scale
    assert pre.iterations < plain.iterations


# -- ilu ----------------------------------------------------------------------

def test_ilu_diagonal_exact_and_one_iteration():
    d = np.arange(1.0, 21.0)
    A = sp.diags(d, format="csr")
    pre = ilu_factor(A, 1e-2, 5)
    np.testing.assert_allclose((pre.L @ pre.U).toarray(), A.toarray(), atol=1e-15)
    res = gmres(A, np.ones(20), tol=1e-12, precond=pre)
    assert res.iterations == 1


def test_ilu_tridiagonal_exact_lu():
    A = tridiag(50)
    pre = ilu_factor(A, drop_tol=0.0, max_fill=5)
    np.testing.assert_allclose((pre.L @ pre.U).toarray(), A.toarray(), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 25), density=st.floats(0.05, 0.5), seed=st.integers(0, 10_000))
def test_ilut_unlimited_fill_reproduces_matrix(n, density, seed):
    # diagonally dominant: no pivoting needed, ILUT(0, inf) is the exact LU
    A = random_nonsymmetric(n, density, seed)
    pre = ilu_factor(A, drop_tol=0.0, max_fill=None)
    LU = (pre.L @ pre.U).toarray()
    Ad = A.toarray()
    scale = np.abs(Ad).max()
    assert np.abs(LU - Ad).max() <= 1e-12 * scale


def test_ilu_factor_indices_sorted():
    A = random_nonsymmetric(80, 0.1, 11)
    pre = ilu_factor(A, 1e-3, 8)
    for M in (pre.L, pre.U):
        as_csr(M)  # validates invariants
        assert M.has_sorted_indices


def test_ilu_max_fill_limits_row_entries():
    A = random_nonsymmetric(100, 0.2, 4)
    pre = ilu_factor(A, 0.0, 3)
    assert np.diff(pre.l_indptr).max() <= 3
    assert np.diff(pre.u_indptr).max() <= 3


def test_ilu_zero_row_is_reported_with_index():
    A = sp.lil_matrix((4, 4))
    A[0, 0] = 1.0
    A[1, 1] = 1.0
    A[3, 3] = 1.0
    with pytest.raises(FactorizationError) as err:
        ilu_factor(A.tocsr())
    assert err.value.row == 2


def test_ilu_small_pivot_is_substituted():
    # saddle-point block with a zero diagonal that receives no fill
    A = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
    A[2, 0] = 1.0
    A[0, 2] = 0.0
    pre = ilu_factor(A, 0.0, None)
    assert pre.n_substituted == 1
    assert abs(pre.u_diag[2]) == pytest.approx(1e-12 * 1.0)


# -- triangular solves ---------------------------------------------------------

def test_solve_triangular_identity():
    pre = IluPreconditioner.from_factors(np.eye(4), np.eye(4))
    v = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(solve_triangular(pre, v), v)


def test_solve_triangular_hand_substitution():
    pre = IluPreconditioner.from_factors(np.array([[1.0, 0.0], [2.0, 1.0]]),
                                         np.array([[3.0, 1.0], [0.0, 4.0]]))
    np.testing.assert_allclose(solve_triangular(pre, np.array([3.0, 10.0])), [2.0 / 3.0, 1.0],
                               atol=1e-15)


def test_solve_triangular_dense_oracle():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    pre = ilu_factor(A, 0.0, None)
    v = rng.normal(size=5)
    x = solve_triangular(pre, v)
    np.testing.assert_allclose(A @ x, v, atol=1e-10)


def test_solve_triangular_rejects_nonfinite():
    pre = IluPreconditioner.from_factors(np.eye(2), np.eye(2))
    with pytest.raises(SolverError):
        solve_triangular(pre, np.array([1.0, np.inf]))


def test_as_csr_rejects_nan():
    with pytest.raises(ValueError):
        as_csr(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_matrix_market_dump(tmp_path):
    A = tridiag(5)
    path = tmp_path / "a.mtx"
    write_matrix_market(path, A)
    import scipy.io
    B = scipy.io.mmread(str(path))
    np.testing.assert_allclose(B.toarray(), A.toarray())

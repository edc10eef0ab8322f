import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cardiomech.mech import (
    MaterialParams,
    MechanicsError,
    MechanicsProblem,
    NewtonSolver,
    extrapolate_initial,
    second_pk,
    solve_with_continuation,
    uniaxial_stretch,
)
from cardiomech.mesh import TriMesh, generate_square_mesh


def unit_square():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return TriMesh(pts, np.array([[0, 1, 2], [0, 2, 3]]), fibre=(1.0, 0.0))


def cross_mesh(n=4, h=1.0):
    """Squares split into four by their centres: symmetric under quarter turns."""
    g = np.arange(n + 1) * h
    X, Y = np.meshgrid(g, g)
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = (np.arange(n) + 0.5) * h
    CX, CY = np.meshgrid(cx, cx)
    centres = np.column_stack([CX.ravel(), CY.ravel()])
    pts = np.vstack([corners, centres])
    tris = []
    for j in range(n):
        for i in range(n):
            a, b = j * (n + 1) + i, j * (n + 1) + i + 1
            c, d = (j + 1) * (n + 1) + i + 1, (j + 1) * (n + 1) + i
            m = (n + 1) ** 2 + j * n + i
            tris += [[a, b, m], [b, c, m], [c, d, m], [d, a, m]]
    return TriMesh(pts, np.array(tris))


@pytest.fixture(scope="module")
def small():
    return MechanicsProblem(generate_square_mesh(10.0, 1.5, seed=2).with_fibre((1.0, 0.0)))


# --- constitutive law ------------------------------------------------------------

def test_identity_equilibrium_pressure():
    assert np.abs(second_pk(np.eye(2), 16.0, 0.0)).max() < 1e-14


def test_identity_stress_without_pressure():
    assert np.allclose(second_pk(np.eye(2), 0.0, 0.0), 16.0 * np.eye(2), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4), st.floats(-20, 20), st.floats(0, 50),
       st.sampled_from(["anisotropic", "isotropic"]))
def test_stress_symmetric(entries, p, ta, form):
    F = np.eye(2) + np.array(entries).reshape(2, 2)
    if np.linalg.det(F) <= 0.05:
        return
    S = second_pk(F, p, ta, MaterialParams(fibre=(0.6, 0.8), active=form))
    assert np.abs(S - S.T).max() < 1e-12


def test_singular_deformation_rejected():
    with pytest.raises(MechanicsError):
        second_pk(np.array([[1.0, 2.0], [0.5, 1.0]]), 0.0, 0.0)


def test_material_validation():
    with pytest.raises(ValueError):
        MaterialParams(c1=-1.0)
    with pytest.raises(ValueError):
        MaterialParams(active="radial")


# --- residual ----------------------------------------------------------------------

def test_reference_residual_vanishes(small):
    assert np.abs(small.residual(small.reference_state())).max() < 1e-10


def test_translation_leaves_residual(small):
    rng = np.random.default_rng(3)
    z = small.reference_state()
    z[: small.n_u] += 0.02 * rng.normal(size=small.n_u)
    ta = rng.uniform(0, 8, len(small.E))
    z2 = z.copy()
    z2[: small.n_u] += np.tile([4.0, -2.5], small.n_p2)
    assert np.abs(small.residual(z2, ta) - small.residual(z, ta)).max() < 1e-10


@pytest.mark.parametrize("form", ["anisotropic", "isotropic"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_jvp_matches_central_differences(form, seed):
    pb = MechanicsProblem(generate_square_mesh(10.0, 1.5, seed=2), MaterialParams(fibre=(1, 1), active=form))
    rng = np.random.default_rng(seed)
    z = pb.reference_state()
    z[: pb.n_u] += 0.03 * rng.normal(size=pb.n_u)
    z[pb.n_u:] += rng.normal(size=pb.n_v)
    d = rng.normal(size=pb.n_dof)
    ta = rng.uniform(0, 10, len(pb.E))
    h = 1e-5
    fd = (pb.residual(z + h * d, ta) - pb.residual(z - h * d, ta)) / (2 * h)
    ex = pb.jvp(z, d, ta)
    assert np.linalg.norm(fd - ex) / np.linalg.norm(ex) < 1e-6


def test_inverted_element_reported(small):
    z = small.reference_state()
    z[0: small.n_u: 2] = -2.0 * small.X[:, 0]  # mirror in x inverts every element
    with pytest.raises(MechanicsError, match="inverted"):
        small.residual(z)


def test_colouring_is_structurally_orthogonal(small):
    P = small.pattern().tocsc()
    col = small.colouring()
    for c in range(col.max() + 1):
        cols = np.flatnonzero(col == c)
        rows = np.concatenate([P.indices[P.indptr[j]:P.indptr[j + 1]] for j in cols])
        assert len(rows) == len(np.unique(rows))


def test_sampled_jacobian_close_to_exact(small):
    z = small.reference_state()
    ta = np.linspace(0, 6, len(small.E))
    A = small.sampled_jacobian(z, ta).toarray()
    D = small.dense_jacobian(z, ta)
    assert np.abs(A - D).max() < 1e-4 * np.abs(D).max()


def test_pinning_removes_rigid_modes():
    pb = MechanicsProblem(generate_square_mesh(6.0, 1.5, seed=1))
    s = np.linalg.svd(pb.dense_jacobian(pb.reference_state()), compute_uv=False)
    assert s[-1] > 1e-8
    free = MechanicsProblem(generate_square_mesh(6.0, 1.5, seed=1), pin=False)
    s = np.linalg.svd(free.dense_jacobian(free.reference_state()), compute_uv=False)
    assert np.sum(s < 1e-8 * s[0]) == 3


# --- Newton ------------------------------------------------------------------------

def test_unforced_solution_is_reference(small):
    z, st_ = NewtonSolver(small).solve(small.reference_state(), 0.0)
    assert st_.iterations == 0
    assert np.abs(z[: small.n_u]).max() < 1e-10


def _dense_newton(pb, z, ta, tol=1e-13):
    """Independent oracle: Newton with central-difference dense Jacobians and LU solves."""
    free = pb.free
    for _ in range(60):
        r = pb.residual(z, ta)[free]
        if np.linalg.norm(r) < tol:
            return z
        J = np.empty((len(free), len(free)))
        for k, j in enumerate(free):
            e = np.zeros(pb.n_dof)
            e[j] = 1e-6
            J[:, k] = (pb.residual(z + e, ta)[free] - pb.residual(z - e, ta)[free]) / 2e-6
        step = np.linalg.solve(J, -r)
        s = 1.0
        while True:
            try:
                if np.linalg.norm(pb.residual(z + s * _embed(pb, step), ta)[free]) < np.linalg.norm(r) or s < 1e-3:
                    break
            except MechanicsError:
                pass
            s *= 0.5
        z = z + s * _embed(pb, step)
    raise AssertionError("dense oracle did not converge")


def _embed(pb, v):
    out = np.zeros(pb.n_dof)
    out[pb.free] = v
    return out


@pytest.mark.parametrize("jvp", ["fd", "exact"])
def test_two_element_square_matches_dense_oracle(jvp):
    pb = MechanicsProblem(unit_square())
    solver = NewtonSolver(pb, tol=1e-12, jvp=jvp)
    z = solve_with_continuation(solver, pb.reference_state(), 5.0)
    ref = _dense_newton(pb, pb.reference_state(), 5.0)
    assert np.abs(z - ref).max() < 1e-8


def test_uniform_tension_gives_homogeneous_contraction():
    pb = MechanicsProblem(generate_square_mesh(10.0, 1.5, seed=4).with_fibre((1.0, 0.0)))
    z = solve_with_continuation(NewtonSolver(pb), pb.reference_state(), 5.0)
    F = pb.deformation_gradient(z)
    C = np.swapaxes(F, -1, -2) @ F
    lam = uniaxial_stretch(5.0)
    assert np.abs(C[..., 0, 0] - lam ** 2).max() < 1e-8
    assert np.abs(C[..., 1, 1] - lam ** -2).max() < 1e-8
    assert np.abs(pb.jacobian_determinants(z) - 1.0).max() < 1e-6


def test_newton_increments_decay_superlinearly(small):
    ta = np.linspace(0.0, 4.0, len(small.E))
    _, st_ = NewtonSolver(small, tol=1e-12, jvp="exact").solve(small.reference_state(), ta)
    inc = st_.increments
    assert len(inc) >= 3
    assert inc[-1] / inc[-2] < 0.5 and inc[-2] / inc[-3] < 0.5


def test_newton_iteration_limit(small):
    with pytest.raises(MechanicsError, match="did not converge"):
        NewtonSolver(small, max_newton=1).solve(small.reference_state(), 3.0)


def test_inner_tolerance_independence(small):
    ta = np.linspace(0.0, 6.0, len(small.E))
    a = NewtonSolver(small, gmres_tol=1e-6).solve(small.reference_state(), ta)[0]
    b = NewtonSolver(small, gmres_tol=1e-7).solve(small.reference_state(), ta)[0]
    assert np.abs(a[: small.n_u] - b[: small.n_u]).max() < 1e-7


def test_quarter_turn_objectivity():
    mesh = cross_mesh(4)
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    centre = np.array([2.0, 2.0])
    cent = mesh.centroids
    # element e' = image of e under the quarter turn about the centre
    img = (cent - centre) @ R.T + centre
    order = np.array([np.argmin(np.linalg.norm(cent - p, axis=1)) for p in img])
    ta = 2.0 + 3.0 * cent[:, 0] / 4.0 + cent[:, 1] / 4.0
    ta_rot = np.empty_like(ta)
    ta_rot[order] = ta
    f = np.array([1.0, 0.3]) / np.hypot(1.0, 0.3)
    out = []
    for fib, t in ((f, ta), (R @ f, ta_rot)):
        pb = MechanicsProblem(mesh, MaterialParams(fibre=tuple(fib)))
        z = solve_with_continuation(NewtonSolver(pb, tol=1e-11), pb.reference_state(), t)
        F = pb.deformation_gradient(z)
        C = np.swapaxes(F, -1, -2) @ F
        out.append((C * pb.wA[..., None, None]).sum(axis=1) / pb.area[:, None, None])
    expected = R @ out[0] @ R.T
    assert np.abs(out[1][order] - expected).max() < 1e-7


def test_extrapolation():
    a = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(extrapolate_initial(a, a), a)
    assert np.array_equal(extrapolate_initial(a, np.zeros(3)), 2 * a)


def test_uniaxial_root():
    lam = uniaxial_stretch(7.0)
    assert 2 * 2.0 * (lam ** 4 - 1) + 7.0 * lam ** 2 == pytest.approx(0.0, abs=1e-12)
    assert uniaxial_stretch(0.0) == 1.0

import dataclasses

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from conftest import poly_field
from svcip.assembly import (CIPParameters, Discretization, TransportField, assemble_cip,
                            assemble_convection, assemble_graddiv, assemble_load,
                            assemble_stokes_blocks, build_discretization, cip_jump_vectors,
                            face_jumps)
from svcip.fem import evaluate, interpolate
from svcip.mesh import barycentric_refine, build_face_topology, build_unit_square_mesh

X, Y = sympy.symbols("x y")
DIV_FREE = poly_field([[0, 0, 0, 1, 0, 0], [0, 0, 0, 0, -2, 0]])  # (x^2, -2xy)


def _random_free(disc, rng):
    v = rng.standard_normal(disc.velocity.n_dofs)
    v[~disc.free_velocity] = 0.0
    return v


# -- Stokes blocks -------------------------------------------------------------------------

def test_mass_and_stiffness(disc3, rng):
    blocks = assemble_stokes_blocks(disc3, 1.0)
    M, A = blocks["M"], blocks["A"]
    assert abs(M - M.T).max() <= 1e-15 * abs(M).max()
    assert abs(A - A.T).max() <= 1e-13 * abs(A).max()
    assert np.linalg.eigvalsh(M.toarray()).min() > 0
    for _ in range(10):
        x = rng.standard_normal(A.shape[0])
        assert x @ A @ x >= -1e-12 * (x @ x)
    # integral of 1 * 1 over the square for each component
    one = interpolate(lambda x, y, t: np.array([[1.0], [1.0]]), disc3.velocity)
    assert one @ M @ one == pytest.approx(2.0, rel=1e-13)
    # Dirichlet form of (x^2, -2xy): |grad|^2 = 4x^2 + 4y^2 + 4x^2 -> 4/3 + 4/3 + 4/3
    v = interpolate(DIV_FREE, disc3.velocity)
    assert v @ A @ v == pytest.approx(4.0, rel=1e-12)
    scaled = assemble_stokes_blocks(disc3, 0.25)["A"]
    np.testing.assert_allclose(scaled.data, 0.25 * A.data)


def test_stokes_blocks_reject_bad_viscosity(disc3):
    with pytest.raises(ValueError):
        assemble_stokes_blocks(disc3, 0.0)


def test_divergence_block_kills_div_free_polynomials(disc3):
    B = assemble_stokes_blocks(disc3)["B"]
    const = interpolate(lambda x, y, t: np.array([[0.3], [-1.2]]), disc3.velocity)
    assert np.abs(B @ const).max() <= 1e-13
    assert np.abs(B @ interpolate(DIV_FREE, disc3.velocity)).max() <= 1e-13


def test_divergence_block_against_closed_form(disc3):
    """(div v, q_i) for v = (x^2, y^2); div v = 2x + 2y is linear, so the oracle is the
    discontinuous P1 mass matrix built from int l_i l_j = |K| (1 + delta_ij) / 12."""
    B = assemble_stokes_blocks(disc3)["B"]
    v = interpolate(poly_field([[0, 0, 0, 1, 0, 0], [0, 0, 0, 0, 0, 1]]), disc3.velocity)
    mesh = disc3.mesh
    area = mesh.signed_areas()
    local_mass = (np.ones((3, 3)) + np.eye(3)) / 12
    nodes = mesh.vertices[mesh.cells]  # P1 nodes are the cell vertices
    div_at_nodes = 2 * nodes[..., 0] + 2 * nodes[..., 1]
    expected = np.einsum("c,ij,cj->ci", area, local_mass, div_at_nodes)
    got = (B @ v)[disc3.pressure.cell_dofs]
    np.testing.assert_allclose(got, expected, atol=1e-15)


def test_pressure_integrals(disc3):
    m = assemble_stokes_blocks(disc3)["m"]
    assert m.sum() == pytest.approx(1.0, rel=1e-14)
    x = disc3.pressure.node_points[:, 0]
    assert m @ x == pytest.approx(0.5, rel=1e-13)


def test_sv_constraint_gives_pointwise_divergence_free(disc3, transport3):
    B = assemble_stokes_blocks(disc3)["B"]
    assert np.abs(B @ transport3).max() <= 1e-12
    grads = disc3.velocity_at_cells(transport3, grad=True)[1]
    div = grads[..., 0, 0] + grads[..., 1, 1]
    assert np.abs(div).max() <= 1e-10 * np.linalg.norm(transport3)


# -- convection ----------------------------------------------------------------------------

def test_convection_zero_transport(disc3):
    N = assemble_convection(disc3, np.zeros(disc3.velocity.n_dofs))
    assert abs(N).max() == 0.0


def test_convection_energy_neutral_on_div_free_transport(disc3, transport3, rng):
    a = TransportField(disc3, transport3)
    N = assemble_convection(disc3, a)
    for _ in range(10):
        v = _random_free(disc3, rng)
        assert abs(v @ N @ v) <= 1e-12 * a.sup_norm * (v @ v)


def test_convection_against_symbolic_integral(disc_two_cells):
    """u^T N(a) v equals the exact integral of ((a . grad) u) . v over the square."""
    a_c = np.array([[0.5, 1, -1, 0.3, 0.2, 0.0], [0.1, 0, 2, -0.4, 0, 1]])
    u_c = np.array([[1, -2, 0.5, 1, 0, 0.7], [0, 1, 1, 0, -1, 0.3]])
    v_c = np.array([[0.2, 0, 0, 1, 1, 0], [1, 0.5, -0.5, 0, 0, 2]])
    mono = [sympy.Integer(1), X, Y, X**2, X * Y, Y**2]

    def sym(c):
        return [sum(sympy.nsimplify(ci) * m for ci, m in zip(row, mono)) for row in c]

    a, u, v = sym(a_c), sym(u_c), sym(v_c)
    integrand = sum((a[0] * sympy.diff(u[i], X) + a[1] * sympy.diff(u[i], Y)) * v[i]
                    for i in range(2))
    exact = float(sympy.integrate(integrand, (X, 0, 1), (Y, 0, 1)))

    d = disc_two_cells
    N = assemble_convection(d, interpolate(poly_field(a_c), d.velocity))
    got = interpolate(poly_field(v_c), d.velocity) @ N @ interpolate(poly_field(u_c), d.velocity)
    assert got == pytest.approx(exact, rel=1e-13)


# -- interior penalty ----------------------------------------------------------------------

def test_cip_symmetric_psd(disc3, transport3, rng):
    S = assemble_cip(disc3, TransportField(disc3, transport3), CIPParameters())
    assert abs(S - S.T).max() <= 1e-13 * abs(S).max()
    for _ in range(10):
        v = rng.standard_normal(S.shape[0])
        assert v @ S @ v >= -1e-14 * abs(S).max() * (v @ v)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=12, max_size=12),
       st.lists(st.floats(-2, 2), min_size=12, max_size=12))
def test_cip_vanishes_on_global_polynomials(disc3, a_coef, v_coef):
    """Single global polynomials have no jumps when the transport is a global polynomial too."""
    a = TransportField(disc3, interpolate(poly_field(np.reshape(a_coef, (2, 6))), disc3.velocity))
    v = interpolate(poly_field(np.reshape(v_coef, (2, 6))), disc3.velocity)
    S = assemble_cip(disc3, a, CIPParameters())
    scale = max(abs(S).max(), 1e-300) * (v @ v)
    assert abs(v @ S @ v) <= 1e-12 * scale


def test_cip_s1_vanishes_on_polynomials_for_any_transport(disc3, transport3):
    """S1 only involves a and grad v, which are both continuous."""
    a = TransportField(disc3, transport3)
    v = interpolate(DIV_FREE, disc3.velocity)
    S1 = assemble_cip(disc3, a, CIPParameters(), terms=(1,))
    assert abs(v @ S1 @ v) <= 1e-13 * abs(S1).max() * (v @ v)
    # the higher terms see the jumps of grad a, so only S1 is exactly zero here
    S23 = assemble_cip(disc3, a, CIPParameters(), terms=(2, 3))
    assert v @ S23 @ v > 0


@pytest.mark.parametrize("a_coef", [
    [[0.3, 1, 0, 0.5, -1, 0], [0, 0, 1, 0.2, 0, -0.5]],
    [[1, 0, 0, 0, 0, 0], [-1, 0, 0, 0, 0, 0]],
])
def test_jumps_vanish_for_continuous_fields(disc3, a_coef):
    a = TransportField(disc3, interpolate(poly_field(a_coef), disc3.velocity))
    w = interpolate(poly_field([[1, 2, -1, 0.5, 0.3, -2], [0, 1, 1, 1, -1, 0.4]]), disc3.velocity)
    j1, j2, j3 = face_jumps(disc3, a, w)
    for j in (j1, j2, j3):
        assert np.abs(j).max() <= 1e-12 * max(1.0, np.abs(w).max() * np.abs(a.coeffs).max())


def _s1_by_hand(d, a_coeffs, v, params):
    """Direct face-quadrature evaluation of the S1 form on the interior faces."""
    fd = d.face_data
    sides = {}
    for side in ("left", "right"):
        cells = fd[side]["cells"]
        ref = d.geom.to_reference(fd["points"], cells)
        av = evaluate(d.velocity, a_coeffs, d.geom, cells, ref, 0)[0]
        gv = evaluate(d.velocity, v, d.geom, cells, ref, 1)[1]  # [..., i, j] = d_j v_i
        conv = np.einsum("fqj,fqij->fqi", av, gv)
        n = fd["normals"][:, None, :]
        sides[side] = conv[..., 0] * n[..., 1] - conv[..., 1] * n[..., 0]
    jump = sides["left"] - sides["right"]
    nodal = np.hypot(*a_coeffs.reshape(2, -1)).max()
    face_vals = np.hypot(*np.moveaxis(
        evaluate(d.velocity, a_coeffs, d.geom, fd["left"]["cells"],
                 d.geom.to_reference(fd["points"], fd["left"]["cells"]), 0)[0], -1, 0)).max()
    sup = max(nodal, face_vals, params.u_floor)
    total = np.sum(fd["weights"] * (params.delta1 * fd["h"][:, None] ** 2) * jump**2)
    return total / sup


def test_cip_s1_matches_direct_evaluation_and_scales_linearly(disc_two_cells, rng):
    d = disc_two_cells
    params = CIPParameters()
    a = interpolate(lambda x, y, t: np.array([np.sin(3 * x) + y, np.cos(2 * y) * x]), d.velocity)
    v = rng.standard_normal(d.velocity.n_dofs)
    S1 = assemble_cip(d, TransportField(d, a), params, terms=(1,))
    expected = _s1_by_hand(d, a, v, params)
    assert v @ S1 @ v == pytest.approx(expected, rel=1e-12)
    S1_double = assemble_cip(d, TransportField(d, 2 * a), params, terms=(1,))
    assert v @ S1_double @ v == pytest.approx(2 * (v @ S1 @ v), rel=1e-12)


def test_cip_floor_and_global_h(disc3, transport3):
    tiny = TransportField(disc3, 1e-12 * transport3)
    params = CIPParameters(u_floor=1e-8)
    S_small = assemble_cip(disc3, tiny, params)
    S_ref = assemble_cip(disc3, TransportField(disc3, transport3), params)
    # quadratic in a divided by the floor instead of |a|
    ratio = S_small.data.max() / S_ref.data.max()
    sup = TransportField(disc3, transport3).sup_norm
    assert ratio == pytest.approx(1e-24 * sup / 1e-8, rel=1e-6)
    S_glob = assemble_cip(disc3, TransportField(disc3, transport3),
                          dataclasses.replace(params, global_h=True))
    v = transport3
    assert v @ S_glob @ v > v @ S_ref @ v  # the mesh diameter exceeds every face length


def test_cip_independent_of_face_order(transport3):
    mesh = barycentric_refine(build_unit_square_mesh(3))
    faces = build_face_topology(mesh)
    perm = np.random.default_rng(5).permutation(faces.interior_count)
    order = np.concatenate([perm, np.arange(faces.interior_count, faces.n_faces)])
    shuffled = dataclasses.replace(
        faces, **{name: getattr(faces, name)[order]
                  for name in ("vertices", "left", "right", "left_local", "right_local",
                               "normals", "lengths")})
    d1 = Discretization(mesh, 2, faces=faces)
    d2 = Discretization(mesh, 2, faces=shuffled)
    assert d1.velocity.n_dofs == d2.velocity.n_dofs
    S1 = assemble_cip(d1, TransportField(d1, transport3), CIPParameters())
    S2 = assemble_cip(d2, TransportField(d2, transport3), CIPParameters())
    assert abs(S1 - S2).max() <= 1e-15 * abs(S1).max()


def test_cip_parameters_validated():
    with pytest.raises(ValueError):
        CIPParameters(u_floor=0.0)
    with pytest.raises(ValueError):
        CIPParameters(delta1=-1.0)
    with pytest.raises(ValueError):
        CIPParameters(delta2=float("nan"))


def test_transport_field_validation(disc3):
    with pytest.raises(ValueError):
        TransportField(disc3, np.zeros(3))
    bad = np.zeros(disc3.velocity.n_dofs)
    bad[0] = np.nan
    with pytest.raises(FloatingPointError):
        TransportField(disc3, bad)


def test_jump_vector_shapes(disc3, transport3):
    J1, J2, J3 = cip_jump_vectors(disc3, TransportField(disc3, transport3))
    F = disc3.faces.interior_count
    nq = len(disc3.face_rule.weights)
    assert J1.shape == J2.shape == (F, nq, 24)
    assert J3.shape == (F, nq, 2, 24)


# -- grad-div and load ---------------------------------------------------------------------

def test_graddiv(disc3, rng):
    assert abs(assemble_graddiv(disc3, 0.0)).max() == 0.0
    G = assemble_graddiv(disc3, 0.05)
    v = interpolate(DIV_FREE, disc3.velocity)
    assert abs(v @ G @ v) <= 1e-14
    for _ in range(10):
        x = rng.standard_normal(G.shape[0])
        assert x @ G @ x >= -1e-13 * (x @ x)
    # (x^2, y^2): gamma * int (2x + 2y)^2 = gamma * 4 * (1/3 + 1/2 + 1/3)
    w = interpolate(poly_field([[0, 0, 0, 1, 0, 0], [0, 0, 0, 0, 0, 1]]), disc3.velocity)
    assert w @ G @ w == pytest.approx(0.05 * 4 * (2 / 3 + 1 / 2), rel=1e-12)
    with pytest.raises(ValueError):
        assemble_graddiv(disc3, -1.0)


def test_load(disc3):
    n = disc3.velocity.n_dofs
    np.testing.assert_array_equal(assemble_load(disc3, lambda x, y, t: np.zeros((2,) + x.shape)),
                                  np.zeros(n))
    c = np.array([[1.5], [-0.5]])
    b = assemble_load(disc3, lambda x, y, t: c[..., None])
    M = assemble_stokes_blocks(disc3)["M"]
    np.testing.assert_allclose(b, M @ interpolate(lambda x, y, t: c, disc3.velocity), atol=1e-15)
    assert b.reshape(2, -1).sum(axis=1) == pytest.approx(c.ravel(), rel=1e-13)


def test_gradient_load_lies_in_range_of_divergence_transpose(disc3):
    """(grad phi, v) = -(phi, div v) for v vanishing on the boundary."""
    from svcip.mms import gradient_perturbation

    b = assemble_load(disc3, gradient_perturbation(2.0))
    B = assemble_stokes_blocks(disc3)["B"]
    free = disc3.free_velocity
    # least-squares fit b = -B^T q on the free dofs; the misfit is load quadrature error
    Bt = B.T.toarray()[free]
    q, *_ = np.linalg.lstsq(-Bt, b[free], rcond=None)
    assert np.abs(-Bt @ q - b[free]).max() <= 1e-9 * np.abs(b).max()


def test_build_discretization_schemes():
    sv = build_discretization(2, 2, "sv-cip")
    plain = build_discretization(2, 2, "sv-plain")
    th = build_discretization(2, 2, "th-graddiv")
    assert sv.with_faces and not plain.with_faces
    assert not sv.pressure.continuous and th.pressure.continuous
    assert sv.pattern.nnz > plain.pattern.nnz
    assert sv.h == pytest.approx(np.sqrt(2) / 2)

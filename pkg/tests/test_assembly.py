import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsea import assembly
from airsea.meshing import generate_two_domain_mesh
from airsea.quadrature import edge_quadrature
from airsea.spaces import build_space, edge_p2_values

from util import (single_triangle_domain, triangle_integral_physical,
                  uncoupled_pair_mesh)


@pytest.fixture(scope="module")
def space2():
    return build_space(generate_two_domain_mesh(2))


@pytest.fixture(scope="module")
def space4():
    return build_space(generate_two_domain_mesh(4))


def random_field(space, dom, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(space.domains[dom].n_u)


# -- dense per-element oracle --------------------------------------------------

def p2_shape_functions(corners):
    """P2 shape callables and gradients on one physical triangle."""
    a, b, c = np.asarray(corners, dtype=float)
    jac = np.stack([b - a, c - a], axis=1)
    inv = np.linalg.inv(jac)

    def bary(px, py):
        xi = inv @ (np.array([px, py]) - a)
        return np.array([1 - xi[0] - xi[1], xi[0], xi[1]])

    grad_l = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]) @ inv

    def shape(k, px, py):
        lam = bary(px, py)
        if k < 3:
            return lam[k] * (2 * lam[k] - 1)
        i, j = [(0, 1), (1, 2), (2, 0)][k - 3]
        return 4 * lam[i] * lam[j]

    def shape_grad(k, px, py):
        lam = bary(px, py)
        if k < 3:
            return (4 * lam[k] - 1) * grad_l[k]
        i, j = [(0, 1), (1, 2), (2, 0)][k - 3]
        return 4 * (lam[i] * grad_l[j] + lam[j] * grad_l[i])

    return shape, shape_grad, bary


def dense_scalar_matrices(space, dom):
    """Mass, stiffness, convection(w) and divergence blocks assembled by a
    slow per-element Duffy quadrature, independent of the package tables."""
    ds = space.domains[dom]
    n, npr = ds.n_scalar, ds.n_p
    mass = np.zeros((n, n))
    stiff = np.zeros((n, n))
    bx = np.zeros((npr, n))
    by = np.zeros((npr, n))
    for elem, conn in enumerate(ds.p2_conn):
        corners = ds.mesh.vertices[ds.mesh.triangles[elem]]
        shape, shape_grad, bary = p2_shape_functions(corners)
        for i in range(6):
            for j in range(6):
                mass[conn[i], conn[j]] += triangle_integral_physical(
                    lambda x, y: shape(i, x, y) * shape(j, x, y), corners)
                stiff[conn[i], conn[j]] += triangle_integral_physical(
                    lambda x, y: shape_grad(i, x, y) @ shape_grad(j, x, y),
                    corners)
        for i in range(3):
            for j in range(6):
                tri = ds.mesh.triangles[elem]
                bx[tri[i], conn[j]] += triangle_integral_physical(
                    lambda x, y: bary(x, y)[i] * shape_grad(j, x, y)[0],
                    corners)
                by[tri[i], conn[j]] += triangle_integral_physical(
                    lambda x, y: bary(x, y)[i] * shape_grad(j, x, y)[1],
                    corners)
    return mass, stiff, bx, by


def dense_convection(space, dom, w):
    ds = space.domains[dom]
    n = ds.n_scalar
    conv = np.zeros((n, n))
    wx, wy = w[:n], w[n:]
    for elem, conn in enumerate(ds.p2_conn):
        corners = ds.mesh.vertices[ds.mesh.triangles[elem]]
        shape, shape_grad, _ = p2_shape_functions(corners)

        def wvec(x, y):
            return np.array([sum(wx[conn[k]] * shape(k, x, y)
                                 for k in range(6)),
                             sum(wy[conn[k]] * shape(k, x, y)
                                 for k in range(6))])

        for i in range(6):
            for j in range(6):
                conv[conn[i], conn[j]] += triangle_integral_physical(
                    lambda x, y: (wvec(x, y) @ shape_grad(j, x, y))
                    * shape(i, x, y), corners, order=12)
    return conv


# -- mass ------------------------------------------------------------------------

def test_p1_mass_single_triangle():
    mesh = uncoupled_pair_mesh()
    space = build_space(mesh)
    m = assembly.p1_mass(space, 0).toarray()
    area = 0.5
    expected = area / 12.0 * np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]])
    assert np.allclose(m, expected, atol=1e-15)


def test_mass_spd(space2):
    m = assembly.assemble_mass(space2, 0)
    for seed in range(3):
        x = random_field(space2, 0, seed)
        assert x @ (m @ x) > 0


def test_mass_total(space2):
    m = assembly.assemble_mass(space2, 0)
    ones = np.ones(m.shape[0])
    assert ones @ (m @ ones) == pytest.approx(2.0, rel=1e-13)


# -- stiffness ---------------------------------------------------------------------

def test_stiffness_kernel_constants(space2):
    k = assembly.assemble_stiffness(space2, 0, 1.0)
    const = np.ones(k.shape[0])
    assert np.abs(k @ const).max() < 1e-13


def test_stiffness_scaling(space2):
    k1 = assembly.assemble_stiffness(space2, 0, 0.7)
    k2 = assembly.assemble_stiffness(space2, 0, 1.4)
    assert np.allclose(2 * k1.toarray(), k2.toarray(), atol=1e-15)


def test_stiffness_rejects_negative(space2):
    with pytest.raises(ValueError):
        assembly.assemble_stiffness(space2, 0, -1.0)


def test_shear_dirichlet_energy(space4):
    ds = space4.domains[0]
    u = ds.interpolate_velocity(
        lambda pts: np.stack([pts[:, 1], 0 * pts[:, 1]], axis=1))
    nu = 0.37
    k = assembly.assemble_stiffness(space4, 0, nu)
    assert u @ (k @ u) == pytest.approx(nu, rel=1e-13)


# -- convection --------------------------------------------------------------------

@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=10, deadline=None)
def test_skew_form_annihilates(seed):
    space = build_space(generate_two_domain_mesh(2))
    w = random_field(space, 0, seed)
    v = random_field(space, 0, seed + 1)
    c = assembly.assemble_convection(space, 0, w, "skew")
    quad = abs(v @ (c @ v))
    scale = np.linalg.norm(v) * max(np.linalg.norm(c @ v), 1e-30)
    assert quad <= 1e-12 * scale


def test_zero_advecting_field(space2):
    c = assembly.assemble_convection(
        space2, 0, np.zeros(space2.domains[0].n_u), "raw")
    assert c.nnz == 0 or np.abs(c.data).max() < 1e-15


def test_convection_unknown_form(space2):
    with pytest.raises(ValueError):
        assembly.assemble_convection(space2, 0,
                                     np.zeros(space2.domains[0].n_u), "fancy")


def test_convection_matches_dense_oracle():
    mesh = uncoupled_pair_mesh()
    space = build_space(mesh)
    rng = np.random.default_rng(11)
    w = rng.standard_normal(space.domains[0].n_u)
    raw = assembly.assemble_convection(space, 0, w, "raw")
    n = space.domains[0].n_scalar
    dense = dense_convection(space, 0, w)
    assert np.allclose(raw.toarray()[:n, :n], dense, atol=1e-13)
    skew = assembly.assemble_convection(space, 0, w, "skew")
    assert np.allclose(skew.toarray()[:n, :n], 0.5 * (dense - dense.T),
                       atol=1e-13)


# -- divergence --------------------------------------------------------------------

def test_divergence_free_p2_fields(space4):
    ds = space4.domains[0]
    b = assembly.assemble_divergence(space4, 0)
    for f in (lambda pts: np.stack([pts[:, 1] ** 2, pts[:, 0] ** 2], axis=1),
              lambda pts: np.stack([-pts[:, 1], pts[:, 0]], axis=1)):
        u = ds.interpolate_velocity(f)
        assert np.abs(b @ u).max() < 1e-12


def test_divergence_of_linear_field(space4):
    ds = space4.domains[0]
    u = ds.interpolate_velocity(
        lambda pts: np.stack([pts[:, 0], 0 * pts[:, 0]], axis=1))
    b = assembly.assemble_divergence(space4, 0)
    assert np.sum(b @ u) == pytest.approx(1.0, rel=1e-12)  # domain area


def test_divergence_of_constant(space4):
    ds = space4.domains[0]
    u = ds.interpolate_velocity(
        lambda pts: np.broadcast_to([3.0, -1.0], (len(pts), 2)))
    b = assembly.assemble_divergence(space4, 0)
    assert np.abs(b @ u).max() < 1e-13


def test_manufactured_interpolant_discrete_divergence_decays():
    # nodal interpolation does not preserve discrete incompressibility, but
    # the defect vanishes under refinement at second order or better
    from airsea import manufactured as mfg
    prob = mfg.ManufacturedProblem(a=1.0, kappa=0.001, nu1=0.5, nu2=0.1)
    defects = []
    for n in (4, 8, 16):
        space = build_space(generate_two_domain_mesh(n))
        ds = space.domains[0]
        u = ds.interpolate_velocity(
            lambda pts: mfg.exact_velocity(prob, 0, 0.0, pts))
        b = assembly.assemble_divergence(space, 0)
        defects.append(np.linalg.norm(b @ u))
    assert defects[1] / defects[0] < 0.3
    assert defects[2] / defects[1] < 0.3


# -- interface ---------------------------------------------------------------------

def test_trace_zero_jump(space4):
    ds = space4.domains
    f = lambda pts: np.stack([pts[:, 0] * (1 - pts[:, 0]),  # noqa: E731
                              0 * pts[:, 0]], axis=1)
    u = (ds[0].interpolate_velocity(f), ds[1].interpolate_velocity(f))
    tr = assembly.sample_interface_trace(space4, u, u)
    assert np.abs(tr.jump_n).max() < 1e-14
    assert np.abs(tr.jump_nm1).max() < 1e-14


def test_trace_constant_jump(space4):
    ds = space4.domains
    u1 = ds[0].interpolate_velocity(
        lambda pts: np.broadcast_to([1.0, 0.0], (len(pts), 2)))
    u2 = ds[1].interpolate_velocity(
        lambda pts: np.broadcast_to([-1.0, 0.0], (len(pts), 2)))
    tr = assembly.sample_interface_trace(space4, (u1, u2))
    assert np.allclose(tr.jump_n, 2.0, atol=1e-14)


def test_trace_matches_closed_form():
    from airsea import manufactured as mfg
    space = build_space(generate_two_domain_mesh(8))
    prob = mfg.ManufacturedProblem(a=1.0, kappa=0.001, nu1=0.5, nu2=0.1)
    u = tuple(space.domains[d].interpolate_velocity(
        lambda pts, d=d: mfg.exact_velocity(prob, d, 0.0, pts))
        for d in (0, 1))
    tr = assembly.sample_interface_trace(space, u)
    pts = space.interface.points.reshape(-1, 2)
    # the interface jump of the solution is quadratic in x, so the discrete
    # trace of the interpolant reproduces it exactly
    exact1 = mfg.exact_velocity(prob, 0, 0.0, pts).reshape(tr.u1.shape)
    exact2 = mfg.exact_velocity(prob, 1, 0.0, pts).reshape(tr.u2.shape)
    jump = np.linalg.norm(exact1 - exact2, axis=-1)
    assert np.allclose(tr.jump_n, jump, atol=1e-12)
    # the individual traces equal the edgewise quadratic interpolant
    basis = edge_p2_values(space.interface.rule.points)
    coords = space.domains[0].nodes[space.interface.nodes_1]
    nodal1 = mfg.exact_velocity(prob, 0, 0.0, coords.reshape(-1, 2))
    nodal1 = nodal1.reshape(coords.shape[0], 3, 2)
    expect1 = np.einsum("qk,nkc->nqc", basis, nodal1)
    assert np.allclose(tr.u1, expect1, atol=1e-12)


def test_interface_blocks_zero_jump(space4):
    ds = space4.domains
    f = lambda pts: np.stack([pts[:, 0], 0 * pts[:, 0]], axis=1)  # noqa: E731
    u = (ds[0].interpolate_velocity(f), ds[1].interpolate_velocity(f))
    tr = assembly.sample_interface_trace(space4, u, u)
    blocks = assembly.assemble_interface_blocks(space4, tr, 1.0, "ga")
    for mat in blocks.implicit:
        assert np.abs(mat.data).max() < 1e-14 if mat.nnz else True
    for vec in blocks.rhs:
        assert np.abs(vec).max() < 1e-14


def test_interface_implicit_psd(space4):
    rng = np.random.default_rng(5)
    u = (rng.standard_normal(space4.domains[0].n_u),
         rng.standard_normal(space4.domains[1].n_u))
    tr = assembly.sample_interface_trace(space4, u, u)
    blocks = assembly.assemble_interface_blocks(space4, tr, 0.7, "ga")
    for dom, mat in enumerate(blocks.implicit):
        for seed in range(3):
            x = random_field(space4, dom, seed)
            assert x @ (mat @ x) >= -1e-12


def test_single_pair_block_is_scaled_edge_mass():
    space = build_space(generate_two_domain_mesh(1))
    ds = space.domains
    u1 = ds[0].interpolate_velocity(
        lambda pts: np.broadcast_to([1.0, 0.0], (len(pts), 2)))
    u2 = ds[1].interpolate_velocity(
        lambda pts: np.broadcast_to([-1.0, 0.0], (len(pts), 2)))
    kappa = 0.31
    tr = assembly.sample_interface_trace(space, (u1, u2), (u1, u2))
    blocks = assembly.assemble_interface_blocks(space, tr, kappa, "ga")

    # independent edge-quadrature oracle for the P2 edge mass on [0,1]
    rule = edge_quadrature(3)
    basis = edge_p2_values(rule.points)
    edge_mass = np.einsum("q,qi,qj->ij", rule.weights, basis, basis)
    nodes = space.interface.nodes_1[0]
    n = ds[0].n_scalar
    block = blocks.implicit[0].toarray()[:n, :n]
    got = block[np.ix_(nodes, nodes)]
    assert np.allclose(got, 2.0 * kappa * edge_mass, atol=1e-14)


def test_alt_variant_scaling(space4):
    rng = np.random.default_rng(7)
    u = (rng.standard_normal(space4.domains[0].n_u),
         rng.standard_normal(space4.domains[1].n_u))
    tr = assembly.sample_interface_trace(space4, u, u)
    plain = assembly.assemble_interface_blocks(space4, tr, 0.5, "ga-vms",
                                               nu=(0.5, 0.1), nu_t=0.25)
    alt = assembly.assemble_interface_blocks(space4, tr, 0.5, "ga-vms-alt",
                                             nu=(0.5, 0.1), nu_t=0.25)
    for dom, scale in enumerate(((0.5 + 0.25) / 0.5, (0.1 + 0.25) / 0.1)):
        assert np.allclose(alt.implicit[dom].toarray(),
                           scale * plain.implicit[dom].toarray(), atol=1e-13)
        assert np.allclose(alt.rhs[dom], scale * plain.rhs[dom], atol=1e-13)


def test_twm_blocks_couple_domains(space4):
    rng = np.random.default_rng(9)
    u = (rng.standard_normal(space4.domains[0].n_u),
         rng.standard_normal(space4.domains[1].n_u))
    tr = assembly.sample_interface_trace(space4, u)
    blocks = assembly.assemble_interface_blocks(space4, tr, 1.0, "twm")
    # same trace weights: own and cross blocks carry identical total mass
    assert blocks.own[0].sum() == pytest.approx(blocks.cross[0].sum(),
                                                rel=1e-12)
    assert blocks.cross[0].shape == (space4.domains[0].n_u,
                                     space4.domains[1].n_u)


def test_ga_requires_two_lags(space4):
    rng = np.random.default_rng(3)
    u = (rng.standard_normal(space4.domains[0].n_u),
         rng.standard_normal(space4.domains[1].n_u))
    tr = assembly.sample_interface_trace(space4, u)
    with pytest.raises(ValueError):
        assembly.assemble_interface_blocks(space4, tr, 1.0, "ga")


# -- gradient projection ------------------------------------------------------------

def test_projection_reproduces_member(space4):
    ds = space4.domains[0]
    u = ds.interpolate_velocity(
        lambda pts: np.stack([0.5 * pts[:, 0] ** 2, 0 * pts[:, 0]], axis=1))
    gh = assembly.project_gradient(space4, 0, u)
    npr = ds.n_p
    g = gh.reshape(4, npr)
    x = ds.mesh.vertices[:, 0]
    assert np.allclose(g[0], x, atol=1e-12)       # du0/dx = x
    assert np.abs(g[1]).max() < 1e-12
    assert np.abs(g[2]).max() < 1e-12
    assert np.abs(g[3]).max() < 1e-12


def test_projection_idempotent(space4):
    rng = np.random.default_rng(21)
    u = rng.standard_normal(space4.domains[0].n_u)
    gh = assembly.project_gradient(space4, 0, u)
    # a field whose gradient is already the projected tensor: build the
    # moments directly and re-project
    cache = assembly._cache(space4, 0)
    npr = space4.domains[0].n_p
    g = gh.reshape(4, npr)
    reprojected = np.concatenate(
        [cache.p1_solve(cache.p1_mass @ gi) for gi in g])
    assert np.allclose(reprojected, gh, atol=1e-11)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=10, deadline=None)
def test_projection_stability(seed):
    space = build_space(generate_two_domain_mesh(3))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(space.domains[0].n_u)
    gh = assembly.project_gradient(space, 0, u)
    cache = assembly._cache(space, 0)
    n = space.domains[0].n_scalar
    grad_norm = np.sqrt(u[:n] @ (cache.stiff_scalar @ u[:n])
                        + u[n:] @ (cache.stiff_scalar @ u[n:]))
    assert assembly.p1_tensor_norm(space, 0, gh) <= grad_norm * (1 + 1e-12)


def test_projection_orthogonality(space4):
    rng = np.random.default_rng(33)
    u = rng.standard_normal(space4.domains[0].n_u)
    gh = assembly.project_gradient(space4, 0, u)
    cache = assembly._cache(space4, 0)
    npr = space4.domains[0].n_p
    moments = assembly.gradient_moments(space4, 0, u)
    defect = moments - (cache.p1_mass @ gh.reshape(4, npr).T).T
    for comp in range(4):
        for seed in range(2):
            l_test = np.random.default_rng(seed).standard_normal(npr)
            assert abs(defect[comp] @ l_test) < 1e-10


def test_grad_minus_tensor_norm_identity(space4):
    rng = np.random.default_rng(4)
    u = rng.standard_normal(space4.domains[0].n_u)
    gh = assembly.project_gradient(space4, 0, u)
    cache = assembly._cache(space4, 0)
    n = space4.domains[0].n_scalar
    grad_sq = (u[:n] @ (cache.stiff_scalar @ u[:n])
               + u[n:] @ (cache.stiff_scalar @ u[n:]))
    # orthogonality turns the cross term: ||grad u - G||^2 = ||grad u||^2 - ||G||^2
    val = assembly.grad_minus_tensor_norm_sq(space4, 0, u, gh)
    expect = grad_sq - assembly.p1_tensor_norm(space4, 0, gh) ** 2
    assert val == pytest.approx(expect, rel=1e-10)


# -- vms right-hand side --------------------------------------------------------------

def test_vms_rhs_zero_cases(space4):
    npr = space4.domains[0].n_p
    gh = np.zeros(4 * npr)
    assert np.abs(assembly.assemble_vms_rhs(space4, 0, gh, 0.5)).max() == 0.0
    rng = np.random.default_rng(2)
    gh = rng.standard_normal(4 * npr)
    assert np.abs(assembly.assemble_vms_rhs(space4, 0, gh, 0.0)).max() == 0.0


def test_vms_rhs_identity_tensor(space4):
    ds = space4.domains[0]
    npr = ds.n_p
    gh = np.concatenate([np.ones(npr), np.zeros(npr), np.zeros(npr),
                         np.ones(npr)])
    nu_t = 0.42
    rhs = assembly.assemble_vms_rhs(space4, 0, gh, nu_t)
    b = assembly.assemble_divergence(space4, 0)
    expect = nu_t * (b.T @ np.ones(npr))
    assert np.allclose(rhs, expect, atol=1e-13)


# -- dense-oracle agreement -------------------------------------------------------------

def test_constant_blocks_match_dense_oracle():
    space = build_space(generate_two_domain_mesh(1))   # 2 elements per domain
    n = space.domains[0].n_scalar
    mass, stiff, bx, by = dense_scalar_matrices(space, 0)
    got_m = assembly.assemble_mass(space, 0).toarray()
    got_k = assembly.assemble_stiffness(space, 0, 1.0).toarray()
    got_b = assembly.assemble_divergence(space, 0).toarray()
    assert np.allclose(got_m[:n, :n], mass, atol=1e-12)
    assert np.allclose(got_m[n:, n:], mass, atol=1e-12)
    assert np.allclose(got_m[:n, n:], 0.0, atol=1e-15)
    assert np.allclose(got_k[:n, :n], stiff, atol=1e-12)
    assert np.allclose(got_b[:, :n], bx, atol=1e-12)
    assert np.allclose(got_b[:, n:], by, atol=1e-12)


def test_alt_variant_rejects_zero_viscosity(space4):
    rng = np.random.default_rng(13)
    u = (rng.standard_normal(space4.domains[0].n_u),
         rng.standard_normal(space4.domains[1].n_u))
    tr = assembly.sample_interface_trace(space4, u, u)
    with pytest.raises(ValueError):
        assembly.assemble_interface_blocks(space4, tr, 0.5, "ga-vms-alt",
                                           nu=(0.0, 0.1), nu_t=0.25)


def test_unknown_variant_rejected(space4):
    rng = np.random.default_rng(14)
    u = (rng.standard_normal(space4.domains[0].n_u),
         rng.standard_normal(space4.domains[1].n_u))
    tr = assembly.sample_interface_trace(space4, u, u)
    with pytest.raises(ValueError):
        assembly.assemble_interface_blocks(space4, tr, 0.5, "magic")

import numpy as np
import pytest

from airsea import manufactured as mfg
from airsea import schemes
from airsea.meshing import generate_two_domain_mesh
from airsea.spaces import build_space

from util import triangle_integral_physical

PROB = mfg.ManufacturedProblem(a=1.0, kappa=0.001, nu1=0.5, nu2=0.1)


def test_reference_point_value():
    u = mfg.exact_velocity(PROB, 0, 0.0, np.array([[0.5, 0.0]]))
    assert u[0, 0] == pytest.approx(3.98410, abs=5e-6)
    assert u[0, 1] == 0.0


def test_rigid_lid_on_interface():
    x = np.linspace(0.0, 1.0, 50)
    pts = np.column_stack([x, np.zeros_like(x)])
    for dom in (0, 1):
        for t in (0.0, 0.5, 1.0):
            u = mfg.exact_velocity(PROB, dom, t, pts)
            assert np.abs(u[:, 1]).max() == 0.0


def test_long_time_decay():
    pts = np.array([[0.3, 0.4], [0.8, 0.1]])
    early = np.abs(mfg.exact_velocity(PROB, 0, 0.0, pts)).max()
    late = np.abs(mfg.exact_velocity(PROB, 0, 50.0, pts)).max()
    assert late <= np.exp(-PROB.b * 50.0) * 10 * early


def test_forcing_decays_with_solution():
    pts = np.array([[0.3, 0.4], [0.8, 0.1], [0.5, 0.9]])
    f0 = np.abs(mfg.forcing(PROB, 0, 0.0, pts)).max()
    f50 = np.abs(mfg.forcing(PROB, 0, 50.0, pts)).max()
    assert f50 <= np.exp(-PROB.b * 50.0) * 10 * f0


def test_divergence_free_pointwise():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.0, 1.0, size=(40, 2))
    assert np.abs(mfg.divergence(PROB, 0, 0.3, pts)).max() < 1e-12
    pts2 = pts.copy()
    pts2[:, 1] -= 1.0
    assert np.abs(mfg.divergence(PROB, 1, 0.3, pts2)).max() < 1e-12


def _fd_forcing(problem, dom, t, pts, h=1e-5):
    """Centered finite differences of the closed-form velocity.

    Evaluated in extended precision: the second difference at step 1e-5
    would otherwise lose ~1e-5 of the field scale to float64 roundoff.
    """
    pts = np.asarray(pts, dtype=np.longdouble)
    t = np.longdouble(t)
    h = np.longdouble(h)
    nu = problem.nu1 if dom == 0 else problem.nu2
    u = mfg.exact_velocity(problem, dom, t, pts)
    dudt = (mfg.exact_velocity(problem, dom, t + h, pts)
            - mfg.exact_velocity(problem, dom, t - h, pts)) / (2 * h)
    ex = np.array([h, 0.0], dtype=np.longdouble)
    ey = np.array([0.0, h], dtype=np.longdouble)
    lap = (mfg.exact_velocity(problem, dom, t, pts + ex)
           + mfg.exact_velocity(problem, dom, t, pts - ex)
           + mfg.exact_velocity(problem, dom, t, pts + ey)
           + mfg.exact_velocity(problem, dom, t, pts - ey)
           - 4 * u) / h ** 2
    dx = (mfg.exact_velocity(problem, dom, t, pts + ex)
          - mfg.exact_velocity(problem, dom, t, pts - ex)) / (2 * h)
    dy = (mfg.exact_velocity(problem, dom, t, pts + ey)
          - mfg.exact_velocity(problem, dom, t, pts - ey)) / (2 * h)
    conv = u[:, :1] * dx + u[:, 1:] * dy
    return dudt - nu * lap + conv


@pytest.mark.parametrize("dom", [0, 1])
def test_forcing_matches_finite_differences(dom):
    rng = np.random.default_rng(42 + dom)
    pts = rng.uniform(0.05, 0.95, size=(100, 2))
    if dom == 1:
        pts[:, 1] -= 1.0
    times = rng.uniform(0.0, 1.0, size=4)
    prob = mfg.ManufacturedProblem(a=2.0, kappa=0.003, nu1=0.2, nu2=0.05)
    for t in times:
        exact = mfg.forcing(prob, dom, t, pts)
        approx = _fd_forcing(prob, dom, t, pts)
        assert np.abs(exact - approx).max() <= 1e-6


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0.05, 0.95, size=(30, 2))
    h = 1e-6
    g = mfg.exact_gradient(PROB, 0, 0.7, pts)
    for comp, e in ((0, np.array([h, 0.0])), (1, np.array([0.0, h]))):
        fd = (mfg.exact_velocity(PROB, 0, 0.7, pts + e)
              - mfg.exact_velocity(PROB, 0, 0.7, pts - e)) / (2 * h)
        assert np.abs(g[:, :, comp] - fd).max() < 1e-8


def test_interface_friction_balance():
    """The viscous traction equals the nonlinear drag on both interface
    sides, so no consistency term is missing from the weak form."""
    x = np.linspace(0.05, 0.95, 20)
    pts = np.column_stack([x, np.zeros_like(x)])
    for t in (0.0, 0.6):
        g1 = mfg.exact_gradient(PROB, 0, t, pts)
        g2 = mfg.exact_gradient(PROB, 1, t, pts)
        u1 = mfg.exact_velocity(PROB, 0, t, pts)
        u2 = mfg.exact_velocity(PROB, 1, t, pts)
        jump = u1 - u2
        drag = PROB.kappa * np.linalg.norm(jump, axis=1) * jump[:, 0]
        # domain 1 outward normal (0,-1): -nu1 * n . grad u . tau = nu1 du0/dy
        assert np.allclose(PROB.nu1 * g1[:, 0, 1], drag, atol=1e-12)
        # domain 2 outward normal (0,+1)
        assert np.allclose(-PROB.nu2 * g2[:, 0, 1], -drag, atol=1e-12)


def test_accumulated_errors_of_exact_trajectory():
    mesh = generate_two_domain_mesh(8)
    space = build_space(mesh)
    dt = 0.25
    states = []
    for j in range(5):
        u = tuple(space.domains[d].interpolate_velocity(
            lambda pts, d=d: mfg.exact_velocity(PROB, d, j * dt, pts))
            for d in (0, 1))
        states.append(schemes.make_state(space, j * dt, u))
    # trajectory vs its own generating field: only interpolation error,
    # which at N=8 sits at the 1e-4 level for this quartic field
    l2, h1 = mfg.accumulated_errors(states, PROB, space, dt)
    assert l2 <= 5e-4
    # fully consistent check at machine level: compare against per-level sums
    acc = mfg.ErrorAccumulator(space, PROB, refine=1)
    for lvl, st in enumerate(states):
        acc(lvl, st)
    assert acc.result(dt) == (l2, h1)


def test_zero_trajectory_error_equals_solution_norm():
    mesh = generate_two_domain_mesh(4)
    space = build_space(mesh)
    dt = 0.5
    states = [schemes.make_state(
        space, j * dt, tuple(np.zeros(space.domains[d].n_u) for d in (0, 1)))
        for j in range(3)]
    l2, _ = mfg.accumulated_errors(states, PROB, space, dt)
    # oracle: dense quadrature of ||u(t_j)||^2 summed over domains and levels
    total = 0.0
    for j in (1, 2):
        for dom in (0, 1):
            ds = space.domains[dom]
            for elem in range(ds.mesh.num_triangles):
                corners = ds.mesh.vertices[ds.mesh.triangles[elem]]
                total += dt * triangle_integral_physical(
                    lambda x, y: float(np.sum(mfg.exact_velocity(
                        PROB, dom, j * dt, np.array([[x, y]])) ** 2)),
                    corners, order=8)
    assert l2 == pytest.approx(np.sqrt(total), rel=1e-8)


def test_level_zero_excluded():
    mesh = generate_two_domain_mesh(2)
    space = build_space(mesh)
    acc = mfg.ErrorAccumulator(space, PROB)
    state = schemes.make_state(
        space, 0.0, tuple(np.zeros(space.domains[d].n_u) for d in (0, 1)))
    acc(0, state)
    assert acc.result(0.1) == (0.0, 0.0)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        mfg.ManufacturedProblem(a=0.0, kappa=0.001, nu1=0.5, nu2=0.1)
    with pytest.raises(ValueError):
        mfg.ManufacturedProblem(a=1.0, kappa=0.0, nu1=0.5, nu2=0.1)
    with pytest.raises(ValueError):
        mfg.ManufacturedProblem(a=1.0, kappa=0.001, nu1=0.0, nu2=0.1)

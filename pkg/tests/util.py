"""Shared helpers: independent quadrature oracles and run drivers."""

from __future__ import annotations

import numpy as np

from airsea import manufactured as mfg
from airsea import meshing, schemes
from airsea.meshing import CoupledMesh, DomainMesh, boundary_edges_of
from airsea.schemes import InitialData, SchemeConfig
from airsea.spaces import build_space


def duffy_integrate(f, order: int = 20) -> float:
    """Integrate f(x, y) over the reference triangle via the collapsed-square
    transform with tensor Gauss-Legendre; independent of the rule tables."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    total = 0.0
    for xi, wi in zip(x, w):
        for eta, we in zip(x, w):
            total += wi * we * f(xi, eta * (1.0 - xi)) * (1.0 - xi)
    return total


def triangle_integral_physical(f, corners, order: int = 20) -> float:
    """Integrate f(px, py) over a physical triangle via the Duffy oracle."""
    a, b, c = np.asarray(corners, dtype=float)
    jac = abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])

    def g(x, y):
        p = a + x * (b - a) + y * (c - a)
        return f(p[0], p[1])

    return duffy_integrate(g, order) * jac


def single_triangle_domain(corners=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))):
    verts = np.asarray(corners, dtype=float)
    tris = np.array([[0, 1, 2]])
    edges = boundary_edges_of(tris)
    tags = np.asarray([meshing.DIRICHLET] * len(edges), dtype=object)
    return DomainMesh(verts, tris, edges, tags)


def uncoupled_pair_mesh():
    """Two single-triangle domains with no interface (unit-square halves)."""
    d1 = single_triangle_domain()
    d2 = single_triangle_domain(((0.0, -1.0), (1.0, -1.0), (0.0, 0.0)))
    return CoupledMesh((d1, d2), interface_pairs=[], spacing=1.0)


def manufactured_setup(N, scheme, nu1=0.5, nu2=0.1, a=1.0, kappa=0.001,
                       t_end=1.0, dt=None, nu_t=None, picard_tol=1e-10,
                       convection_form="skew", exact_u1=True):
    """Mesh, space, config, problem data and initial levels for one run."""
    mesh = meshing.generate_two_domain_mesh(N)
    space = build_space(mesh)
    prob = mfg.ManufacturedProblem(a=a, kappa=kappa, nu1=nu1, nu2=nu2)
    cfg = SchemeConfig(scheme=scheme, nu1=nu1, nu2=nu2, kappa=kappa,
                       nu_t=mesh.spacing if nu_t is None else nu_t,
                       dt=1.0 / N if dt is None else dt, t_end=t_end,
                       picard_tol=picard_tol, convection_form=convection_form)
    forcing = tuple(mfg.forcing_fn(prob, d) for d in (0, 1))
    dirichlet = tuple(mfg.velocity_fn(prob, d) for d in (0, 1))

    def interp(dom, t):
        return space.domains[dom].interpolate_velocity(
            lambda pts: mfg.exact_velocity(prob, dom, t, pts))

    u1 = (interp(0, cfg.dt), interp(1, cfg.dt)) if exact_u1 else None
    initial = InitialData(u0=(interp(0, 0.0), interp(1, 0.0)), u1=u1)
    return space, cfg, prob, forcing, dirichlet, initial


def run_manufactured(N, scheme, observers=(), **kwargs):
    space, cfg, prob, forcing, dirichlet, initial = manufactured_setup(
        N, scheme, **kwargs)
    acc = mfg.ErrorAccumulator(space, prob, refine=1)
    result = schemes.run(space, cfg, forcing, dirichlet, initial,
                         observers=[acc, *observers])
    errors = acc.result(cfg.dt) if result.status == "ok" else (None, None)
    return result, errors, space, cfg, prob

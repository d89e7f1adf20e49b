"""Operator assembly: mass, diffusion, convection, divergence, interface
friction terms and the large-scale gradient projection.

Matrices are CSR with velocity dofs component blocked.  Blocks that never
change (mass, diffusion, divergence, the P1 projection mass) are cached on
the space; convection and interface blocks are rebuilt from the supplied
fields each call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spaces import DomainSpace, Space


def _scatter(local: np.ndarray, rows_conn: np.ndarray, cols_conn: np.ndarray,
             shape: tuple[int, int]) -> sp.csr_matrix:
    rows = np.broadcast_to(rows_conn[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(cols_conn[:, None, :], local.shape).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape)
    return mat.tocsr()


def _vector_expand(a: sp.spmatrix) -> sp.csr_matrix:
    """Apply a scalar operator to both velocity components."""
    return sp.block_diag((a, a), format="csr")


class _DomainCache:
    """Constant operators for one domain."""

    def __init__(self, ds: DomainSpace):
        w = ds.quad.weights
        vals, grads = ds.p2_vals, ds.p2_grads
        n, npr = ds.n_scalar, ds.n_p
        conn = ds.p2_conn

        m_ref = np.einsum("q,qi,qj->ij", w, vals, vals)
        local_m = ds.detj[:, None, None] * m_ref
        self.mass_scalar = _scatter(local_m, conn, conn, (n, n))

        local_k = np.einsum("q,eqic,eqjc,e->eij", w, grads, grads, ds.detj)
        self.stiff_scalar = _scatter(local_k, conn, conn, (n, n))

        p1c = ds.mesh.triangles
        local_bx = np.einsum("q,qi,eqj,e->eij", w, ds.p1_vals,
                             grads[:, :, :, 0], ds.detj)
        local_by = np.einsum("q,qi,eqj,e->eij", w, ds.p1_vals,
                             grads[:, :, :, 1], ds.detj)
        self.bx = _scatter(local_bx, p1c, conn, (npr, n))
        self.by = _scatter(local_by, p1c, conn, (npr, n))

        m1_ref = np.einsum("q,qi,qj->ij", w, ds.p1_vals, ds.p1_vals)
        local_m1 = ds.detj[:, None, None] * m1_ref
        self.p1_mass = _scatter(local_m1, p1c, p1c, (npr, npr))
        self.p1_solve = spla.factorized(self.p1_mass.tocsc())

        self.mass = _vector_expand(self.mass_scalar)
        self.stiff_unit = _vector_expand(self.stiff_scalar)
        self.divergence = sp.hstack([self.bx, self.by], format="csr")


def _cache(space: Space, domain: int) -> _DomainCache:
    store = getattr(space, "_assembly_cache", None)
    if store is None:
        store = {}
        space._assembly_cache = store
    if domain not in store:
        store[domain] = _DomainCache(space.domains[domain])
    return store[domain]


def assemble_mass(space: Space, domain: int) -> sp.csr_matrix:
    """Vector P2 mass matrix (symmetric positive definite)."""
    return _cache(space, domain).mass


def p1_mass(space: Space, domain: int) -> sp.csr_matrix:
    return _cache(space, domain).p1_mass


def assemble_stiffness(space: Space, domain: int, nu: float) -> sp.csr_matrix:
    """nu * (grad u, grad v) for vector P2 fields."""
    if nu < 0:
        raise ValueError(f"viscosity must be nonnegative, got {nu}")
    return nu * _cache(space, domain).stiff_unit


def assemble_divergence(space: Space, domain: int) -> sp.csr_matrix:
    """B with (B u)_q = (div u, q), shape (pressure dofs, velocity dofs)."""
    return _cache(space, domain).divergence


def assemble_convection(space: Space, domain: int, w_field: np.ndarray,
                        form: str = "skew") -> sp.csr_matrix:
    """Convection operator with advecting field ``w_field``.

    ``raw`` gives (w . grad u, v); ``skew`` the antisymmetrized form
    0.5 (w . grad u, v) - 0.5 (w . grad v, u), whose quadratic form vanishes
    identically.
    """
    if form not in ("skew", "raw"):
        raise ValueError(f"unknown convection form {form!r}")
    ds = space.domains[domain]
    conn = ds.p2_conn
    wq = ds.quad.weights
    coeffs = np.stack([w_field[ds.udof(0, conn)],
                       w_field[ds.udof(1, conn)]], axis=-1)   # (nt, 6, 2)
    wvals = np.einsum("qi,eik->eqk", ds.p2_vals, coeffs)      # (nt, nq, 2)
    wdotg = np.einsum("eqk,eqjk->eqj", wvals, ds.p2_grads)
    local = np.einsum("q,qi,eqj,e->eij", wq, ds.p2_vals, wdotg, ds.detj)
    n = ds.n_scalar
    c_raw = _scatter(local, conn, conn, (n, n))
    if form == "skew":
        c_raw = 0.5 * (c_raw - c_raw.T)
    return _vector_expand(c_raw.tocsr())


def assemble_load(space: Space, domain: int, f, t: float) -> np.ndarray:
    """Load vector (f, v) with ``f(t, points) -> (n, 2)``."""
    ds = space.domains[domain]
    fvals = np.asarray(f(t, ds.qpoints.reshape(-1, 2)))
    fvals = fvals.reshape(ds.qpoints.shape)
    local = np.einsum("q,qi,eqk,e->eik", ds.quad.weights, ds.p2_vals,
                      fvals, ds.detj)
    out = np.zeros(ds.n_u)
    for comp in (0, 1):
        np.add.at(out, ds.udof(comp, ds.p2_conn), local[:, :, comp])
    return out


# -- large-scale gradient projection ----------------------------------------

def gradient_moments(space: Space, domain: int, u: np.ndarray) -> np.ndarray:
    """(grad u, L) moments against P1 test functions, shape (4, n_p1)."""
    cache = _cache(space, domain)
    n = space.domains[domain].n_scalar
    ux, uy = u[:n], u[n:]
    return np.stack([cache.bx @ ux, cache.by @ ux,
                     cache.bx @ uy, cache.by @ uy])


def project_gradient(space: Space, domain: int, u: np.ndarray) -> np.ndarray:
    """L2 projection of grad(u) onto the P1 tensor space.

    Component layout: [du0/dx, du0/dy, du1/dx, du1/dy], each of length n_p1.
    """
    cache = _cache(space, domain)
    moments = gradient_moments(space, domain, u)
    return np.concatenate([cache.p1_solve(m) for m in moments])


def assemble_vms_rhs(space: Space, domain: int, gh: np.ndarray,
                     nu_t: float) -> np.ndarray:
    """Right-hand side nu_T (G, grad v) removing large-scale dissipation."""
    if nu_t < 0:
        raise ValueError(f"eddy viscosity must be nonnegative, got {nu_t}")
    cache = _cache(space, domain)
    npr = space.domains[domain].n_p
    g = gh.reshape(4, npr)
    rx = cache.bx.T @ g[0] + cache.by.T @ g[1]
    ry = cache.bx.T @ g[2] + cache.by.T @ g[3]
    return nu_t * np.concatenate([rx, ry])


def p1_tensor_norm(space: Space, domain: int, gh: np.ndarray) -> float:
    """L2 norm of a P1 tensor field."""
    cache = _cache(space, domain)
    npr = space.domains[domain].n_p
    g = gh.reshape(4, npr)
    return float(np.sqrt(sum(gi @ (cache.p1_mass @ gi) for gi in g)))


def grad_minus_tensor_norm_sq(space: Space, domain: int, u: np.ndarray,
                              gh: np.ndarray) -> float:
    """|| grad u - G ||^2 for P2 velocity u and P1 tensor G (exact quadrature)."""
    cache = _cache(space, domain)
    ds = space.domains[domain]
    n = ds.n_scalar
    grad_sq = (u[:n] @ (cache.stiff_scalar @ u[:n])
               + u[n:] @ (cache.stiff_scalar @ u[n:]))
    moments = gradient_moments(space, domain, u)
    g = gh.reshape(4, ds.n_p)
    cross = sum(gi @ mi for gi, mi in zip(g, moments))
    g_sq = sum(gi @ (cache.p1_mass @ gi) for gi in g)
    return float(grad_sq - 2.0 * cross + g_sq)


# -- interface terms ---------------------------------------------------------

@dataclass
class InterfaceTrace:
    """Lagged interface data at quadrature points, per (pair, point).

    ``u1``/``u2`` are the level-n velocities of the two domains, ``jump_n``
    and ``jump_nm1`` the Euclidean jump magnitudes at levels n and n-1.
    ``jump_nm1`` is None when only one lag level was supplied.
    """

    points: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    jump_n: np.ndarray
    jump_nm1: np.ndarray | None


def sample_interface_trace(space: Space, u_n, u_nm1=None) -> InterfaceTrace:
    """Evaluate lagged traces; ``u_n``/``u_nm1`` are (u_domain1, u_domain2)."""
    t1 = space.trace_1(u_n[0])
    t2 = space.trace_2(u_n[1])
    jump_n = np.linalg.norm(t1 - t2, axis=-1)
    jump_nm1 = None
    if u_nm1 is not None:
        s1 = space.trace_1(u_nm1[0])
        s2 = space.trace_2(u_nm1[1])
        jump_nm1 = np.linalg.norm(s1 - s2, axis=-1)
    return InterfaceTrace(space.interface.points, t1, t2, jump_n, jump_nm1)


def _edge_matrix(space: Space, weights: np.ndarray, rows_dom: int,
                 cols_dom: int) -> sp.csr_matrix:
    """Weighted interface mass: rows in one domain, columns in the other.

    ``weights`` has shape (pairs, quad points) and already contains all
    scalar factors except the line element, which is applied here.
    """
    iface = space.interface
    basis = iface.basis
    wfull = weights * iface.wjac
    local = np.einsum("nq,qk,ql->nkl", wfull, basis, basis)
    nodes = (iface.nodes_1, iface.nodes_2)
    ds_r = space.domains[rows_dom]
    ds_c = space.domains[cols_dom]
    scalar = _scatter(local, nodes[rows_dom], nodes[cols_dom],
                      (ds_r.n_scalar, ds_c.n_scalar))
    return _vector_expand(scalar)


def _edge_vector(space: Space, weights: np.ndarray, values: np.ndarray,
                 dom: int) -> np.ndarray:
    """Interface load with vector ``values`` (pairs, nq, 2) against tests of
    ``dom``."""
    iface = space.interface
    wfull = weights * iface.wjac
    local = np.einsum("nq,nqc,qk->nkc", wfull, values, iface.basis)
    ds = space.domains[dom]
    nodes = (iface.nodes_1, iface.nodes_2)[dom]
    out = np.zeros(ds.n_u)
    for comp in (0, 1):
        np.add.at(out, ds.udof(comp, nodes), local[:, :, comp])
    return out


@dataclass
class DecoupledInterface:
    """Per-domain implicit matrices and explicit right-hand sides."""

    implicit: tuple[sp.csr_matrix, sp.csr_matrix]
    rhs: tuple[np.ndarray, np.ndarray]


@dataclass
class CoupledInterface:
    """Own-domain and cross-domain blocks of the monolithic friction term."""

    own: tuple[sp.csr_matrix, sp.csr_matrix]
    cross: tuple[sp.csr_matrix, sp.csr_matrix]   # (rows dom1 x cols dom2, ...)


def assemble_interface_blocks(space: Space, trace: InterfaceTrace,
                              kappa: float, variant: str,
                              nu: tuple[float, float] = (1.0, 1.0),
                              nu_t: float = 0.0):
    """Interface friction contributions for one time step.

    Decoupled variants get the lagged geometric-averaging form: implicit
    kappa |[u^n]| u^{n+1} . v plus the explicit cross right-hand side
    kappa u_j^n |[u^n]|^{1/2} |[u^{n-1}]|^{1/2} . v.  Monolithic variants get
    the coupled form kappa |[u^n]| [u^{n+1}] . v.  The ``ga-vms-alt`` variant
    scales all domain-i contributions by (nu_i + nu_T) / nu_i.
    """
    if variant == "imex":
        # bootstrap form: own term implicit, cross term fully explicit, both
        # weighted by the single available jump level
        w = kappa * trace.jump_n
        return DecoupledInterface(
            implicit=(_edge_matrix(space, w, 0, 0),
                      _edge_matrix(space, w, 1, 1)),
            rhs=(_edge_vector(space, w, trace.u2, 0),
                 _edge_vector(space, w, trace.u1, 1)))
    if variant in ("ga", "ga-vms", "ga-vms-alt"):
        if trace.jump_nm1 is None:
            raise ValueError("decoupled interface terms need two lag levels")
        scale = (1.0, 1.0)
        if variant == "ga-vms-alt":
            if nu[0] <= 0 or nu[1] <= 0:
                raise ValueError("alternative scaling requires positive "
                                 "viscosities")
            scale = ((nu[0] + nu_t) / nu[0], (nu[1] + nu_t) / nu[1])
        geo = np.sqrt(trace.jump_n) * np.sqrt(trace.jump_nm1)
        j1 = _edge_matrix(space, scale[0] * kappa * trace.jump_n, 0, 0)
        j2 = _edge_matrix(space, scale[1] * kappa * trace.jump_n, 1, 1)
        r1 = _edge_vector(space, scale[0] * kappa * geo, trace.u2, 0)
        r2 = _edge_vector(space, scale[1] * kappa * geo, trace.u1, 1)
        return DecoupledInterface(implicit=(j1, j2), rhs=(r1, r2))
    if variant in ("twm", "twm-vms"):
        w = kappa * trace.jump_n
        return CoupledInterface(
            own=(_edge_matrix(space, w, 0, 0), _edge_matrix(space, w, 1, 1)),
            cross=(_edge_matrix(space, w, 0, 1), _edge_matrix(space, w, 1, 0)))
    raise ValueError(f"unknown scheme variant {variant!r}")


def interface_quadratic(space: Space, weights: np.ndarray,
                        values_sq: np.ndarray) -> float:
    """Integrate ``weights * values_sq`` over the interface (both shapes
    (pairs, nq))."""
    return float(np.sum(weights * values_sq * space.interface.wjac))

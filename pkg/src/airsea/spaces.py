"""Taylor-Hood finite element spaces on the coupled mesh.

Velocity uses continuous piecewise quadratics (vector valued, component
blocked), pressure continuous piecewise linears, and the large-scale tensor
space piecewise linears with four components per vertex.  Velocity dofs are
numbered ``component * n_nodes + node`` with nodes ordered vertices first,
then edge midpoints.
"""

from __future__ import annotations

import numpy as np

from .meshing import (CoupledMesh, DomainMesh, DIRICHLET, INTERFACE, OUTFLOW,
                      triangle_areas)
from .quadrature import QuadratureRule, edge_quadrature, triangle_quadrature


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points; node order v0,v1,v2,m01,m12,m20."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=1)


_GRAD_L = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_reference_gradients(bary: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients of the P2 basis, shape (nq, 6, 2)."""
    nq = bary.shape[0]
    out = np.empty((nq, 6, 2))
    for i in range(3):
        out[:, i, :] = (4 * bary[:, i, None] - 1) * _GRAD_L[i]
    for k, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
        out[:, 3 + k, :] = 4 * (bary[:, i, None] * _GRAD_L[j]
                                + bary[:, j, None] * _GRAD_L[i])
    return out


def p1_values(bary: np.ndarray) -> np.ndarray:
    return np.asarray(bary, dtype=float)


def edge_p2_values(s: np.ndarray) -> np.ndarray:
    """1D quadratic basis on [0,1]; node order (end 0, end 1, midpoint)."""
    s = np.asarray(s, dtype=float)
    return np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)],
                    axis=1)


class DomainSpace:
    """Dof maps, constraints and precomputed element geometry for one domain."""

    def __init__(self, mesh: DomainMesh, quad: QuadratureRule):
        self.mesh = mesh
        self.quad = quad
        self._build_connectivity()
        self._build_geometry()
        self._build_constraints()

    # -- connectivity -------------------------------------------------------

    def _build_connectivity(self):
        tris = self.mesh.triangles
        nv = self.mesh.num_vertices
        edge_map: dict[tuple[int, int], int] = {}
        local_edges = [(0, 1), (1, 2), (2, 0)]
        conn = np.empty((len(tris), 6), dtype=int)
        conn[:, :3] = tris
        for t, tri in enumerate(tris):
            for k, (i, j) in enumerate(local_edges):
                key = (min(tri[i], tri[j]), max(tri[i], tri[j]))
                eid = edge_map.setdefault(key, len(edge_map))
                conn[t, 3 + k] = nv + eid
        self.p2_conn = conn
        self.edges = np.array(sorted(edge_map, key=edge_map.get), dtype=int)
        self.num_edges = len(edge_map)
        self.n_scalar = nv + self.num_edges
        self.n_u = 2 * self.n_scalar
        self.n_p = nv
        midpoints = 0.5 * (self.mesh.vertices[self.edges[:, 0]]
                           + self.mesh.vertices[self.edges[:, 1]])
        self.nodes = np.vstack([self.mesh.vertices, midpoints])
        self._edge_map = edge_map

    def edge_id(self, v0: int, v1: int) -> int:
        return self._edge_map[(min(v0, v1), max(v0, v1))]

    def udof(self, component: int, node) -> np.ndarray:
        return component * self.n_scalar + np.asarray(node)

    # -- geometry -----------------------------------------------------------

    def _build_geometry(self):
        verts = self.mesh.vertices
        tris = self.mesh.triangles
        p = verts[tris]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        self.inv_j = np.linalg.inv(jac)
        bary = self.quad.points
        self.p2_vals = p2_values(bary)
        self.p1_vals = p1_values(bary)
        ref_grads = p2_reference_gradients(bary)
        inv_jt = np.transpose(self.inv_j, (0, 2, 1))
        # physical gradients: (elements, quad points, basis, component)
        self.p2_grads = np.einsum("ecd,qid->eqic", inv_jt, ref_grads)
        self.p1_grads = np.einsum("ecd,id->eic", inv_jt, _GRAD_L)
        self.qpoints = np.einsum("qi,eic->eqc", bary, p)
        self.areas = triangle_areas(verts, tris)

    # -- constraints --------------------------------------------------------

    def _edge_nodes(self, tag: str) -> np.ndarray:
        sel = self.mesh.boundary_tags == tag
        edges = self.mesh.boundary_edges[sel]
        if len(edges) == 0:
            return np.empty(0, dtype=int)
        nv = self.mesh.num_vertices
        mids = np.array([nv + self.edge_id(v0, v1) for v0, v1 in edges])
        return np.unique(np.concatenate([edges.ravel(), mids]))

    def _build_constraints(self):
        self.dirichlet_nodes = self._edge_nodes(DIRICHLET)
        interface_all = self._edge_nodes(INTERFACE)
        self.interface_nodes = np.setdiff1d(interface_all, self.dirichlet_nodes)
        # both geometries have a horizontal interface: normal component is y
        self.interface_normal_component = 1

        fixed = np.zeros(self.n_u, dtype=bool)
        for comp in (0, 1):
            fixed[self.udof(comp, self.dirichlet_nodes)] = True
        fixed[self.udof(self.interface_normal_component,
                        self.interface_nodes)] = True
        self.u_fixed = fixed
        self.u_free = np.flatnonzero(~fixed)

        has_outflow = bool((self.mesh.boundary_tags == OUTFLOW).any())
        self.pressure_pin: int | None = None if has_outflow else 0
        p_fixed = np.zeros(self.n_p, dtype=bool)
        if self.pressure_pin is not None:
            p_fixed[self.pressure_pin] = True
        self.p_fixed = p_fixed
        self.p_free = np.flatnonzero(~p_fixed)

    def dirichlet_values(self, g, t: float) -> np.ndarray:
        """Full-length velocity vector holding constrained values.

        ``g(t, points) -> (n, 2)`` supplies Dirichlet data; interface normal
        dofs are set to zero.  Free entries are left at zero.
        """
        values = np.zeros(self.n_u)
        if len(self.dirichlet_nodes):
            data = np.asarray(g(t, self.nodes[self.dirichlet_nodes]))
            for comp in (0, 1):
                values[self.udof(comp, self.dirichlet_nodes)] = data[:, comp]
        return values

    # -- interpolation and evaluation --------------------------------------

    def interpolate_velocity(self, f) -> np.ndarray:
        """Nodal interpolation of ``f(points) -> (n, 2)`` into the P2 space."""
        data = np.asarray(f(self.nodes))
        return np.concatenate([data[:, 0], data[:, 1]])

    def interpolate_pressure(self, f) -> np.ndarray:
        return np.asarray(f(self.mesh.vertices), dtype=float)

    def velocity_at_nodes(self, u: np.ndarray) -> np.ndarray:
        return np.stack([u[:self.n_scalar], u[self.n_scalar:]], axis=1)

    def locate(self, point) -> tuple[int, np.ndarray]:
        p = np.asarray(point, dtype=float)
        v0 = self.mesh.vertices[self.mesh.triangles[:, 0]]
        xi = np.einsum("ecd,ed->ec", self.inv_j, p[None, :] - v0)
        bary = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi])
        inside = np.flatnonzero((bary > -1e-10).all(axis=1))
        if len(inside) == 0:
            raise ValueError(f"point {point} not inside the domain")
        elem = int(inside[0])
        return elem, bary[elem]

    def evaluate_velocity(self, u: np.ndarray, point):
        """Value (2,) and gradient (2,2) of a velocity field at one point."""
        elem, bary = self.locate(point)
        vals = p2_values(bary[None, :])[0]
        ref_grads = p2_reference_gradients(bary[None, :])[0]
        grads = ref_grads @ self.inv_j[elem]
        conn = self.p2_conn[elem]
        comps = np.stack([u[self.udof(0, conn)], u[self.udof(1, conn)]])
        value = comps @ vals
        gradient = comps @ grads
        return value, gradient

    def evaluate_pressure(self, p: np.ndarray, point):
        elem, bary = self.locate(point)
        grads = _GRAD_L @ self.inv_j[elem]
        conn = self.mesh.triangles[elem]
        return float(p[conn] @ bary), p[conn] @ grads


class InterfaceGeometry:
    """Aligned interface trace data shared by the two domains.

    ``nodes_i`` holds, per pair, the P2 node ids (low end, high end, midpoint)
    in domain i; quadrature points of a pair coincide physically in both
    domains.
    """

    def __init__(self, mesh: CoupledMesh, dom_spaces, edge_points: int = 3):
        self.rule = edge_quadrature(edge_points)
        self.basis = edge_p2_values(self.rule.points)
        n = len(mesh.interface_pairs)
        self.nodes_1 = np.empty((n, 3), dtype=int)
        self.nodes_2 = np.empty((n, 3), dtype=int)
        self.lengths = np.empty(n)
        for k, pair in enumerate(mesh.interface_pairs):
            for nodes, edge, space, dom in ((self.nodes_1, pair.edge_1,
                                             dom_spaces[0], mesh.domains[0]),
                                            (self.nodes_2, pair.edge_2,
                                             dom_spaces[1], mesh.domains[1])):
                mid = dom.num_vertices + space.edge_id(*edge)
                nodes[k] = (edge[0], edge[1], mid)
            p = mesh.domains[0].vertices[list(pair.edge_1)]
            self.lengths[k] = np.linalg.norm(p[1] - p[0])
        # integration weight per (pair, quad point)
        self.wjac = self.lengths[:, None] * self.rule.weights[None, :]
        self.points = self._physical_points(mesh, dom_spaces)

    def _physical_points(self, mesh, dom_spaces):
        coords = dom_spaces[0].nodes[self.nodes_1]        # (n, 3, 2)
        return np.einsum("qk,nkc->nqc", self.basis, coords)

    def trace(self, space: "DomainSpace", nodes: np.ndarray, u: np.ndarray):
        """Velocity values at interface quadrature points, shape (n, nq, 2)."""
        out = np.empty(self.nodes_1.shape[:1] + (len(self.rule.points), 2))
        for comp in (0, 1):
            coeffs = u[space.udof(comp, nodes)]           # (n, 3)
            out[:, :, comp] = coeffs @ self.basis.T
        return out


class Space:
    """Coupled Taylor-Hood space over both domains."""

    def __init__(self, mesh: CoupledMesh, quad_degree: int = 5,
                 edge_points: int = 3):
        self.mesh = mesh
        self.quad = triangle_quadrature(quad_degree)
        self.domains = tuple(DomainSpace(dm, self.quad) for dm in mesh.domains)
        self.interface = InterfaceGeometry(mesh, self.domains, edge_points)

    def trace_1(self, u1: np.ndarray) -> np.ndarray:
        return self.interface.trace(self.domains[0], self.interface.nodes_1, u1)

    def trace_2(self, u2: np.ndarray) -> np.ndarray:
        return self.interface.trace(self.domains[1], self.interface.nodes_2, u2)


def build_space(mesh: CoupledMesh, quad_degree: int = 5,
                edge_points: int = 3) -> Space:
    return Space(mesh, quad_degree=quad_degree, edge_points=edge_points)


# -- error norms ------------------------------------------------------------

def _subdivided_barycentric(rule: QuadratureRule, refine: int):
    """Composite rule: barycentric points and weights after ``refine`` splits."""
    corners = [np.eye(3)]
    for _ in range(refine):
        new = []
        for c in corners:
            a, b, cc = c
            mab, mbc, mca = 0.5 * (a + b), 0.5 * (b + cc), 0.5 * (cc + a)
            new.extend([np.array([a, mab, mca]), np.array([mab, b, mbc]),
                        np.array([mca, mbc, cc]), np.array([mab, mbc, mca])])
        corners = new
    pts = np.concatenate([rule.points @ c for c in corners])
    scale = 0.25 ** refine
    w = np.tile(rule.weights * scale, len(corners))
    return pts, w


def error_norms(space: Space, domain: int, u: np.ndarray, exact, exact_grad,
                t: float = 0.0, refine: int = 1):
    """L2 and H1-seminorm errors of a velocity field against closed forms.

    ``exact(t, points) -> (n, 2)`` and ``exact_grad(t, points) -> (n, 2, 2)``
    with gradient component [i, j] = d u_i / d x_j.  Integration uses a
    composite degree-6 rule, subdivided ``refine`` times per element.
    """
    ds = space.domains[domain]
    cache = getattr(space, "_error_quad_cache", None)
    if cache is None:
        cache = {}
        space._error_quad_cache = cache
    key = (domain, refine)
    if key not in cache:
        bary, w = _subdivided_barycentric(triangle_quadrature(6), refine)
        vals = p2_values(bary)                                  # (nq, 6)
        ref_grads = p2_reference_gradients(bary)                # (nq, 6, 2)
        corners = ds.mesh.vertices[ds.mesh.triangles]           # (nt, 3, 2)
        pts = np.einsum("qi,eic->eqc", bary, corners)
        inv_jt = np.transpose(ds.inv_j, (0, 2, 1))
        grads = np.einsum("ecd,qid->eqic", inv_jt, ref_grads)   # (nt,nq,6,2)
        cache[key] = (w, vals, grads, pts)
    w, vals, grads, pts = cache[key]

    coeffs = np.stack([u[ds.udof(0, ds.p2_conn)],
                       u[ds.udof(1, ds.p2_conn)]], axis=-1)  # (nt, 6, 2)
    uh = np.einsum("qi,eik->eqk", vals, coeffs)
    guh = np.einsum("eqic,eik->eqkc", grads, coeffs)

    flat = pts.reshape(-1, 2)
    ue = np.asarray(exact(t, flat)).reshape(uh.shape)
    gue = np.asarray(exact_grad(t, flat)).reshape(guh.shape)

    wdet = w[None, :] * ds.detj[:, None]
    l2sq = np.einsum("eq,eqk->", wdet, (uh - ue) ** 2)
    h1sq = np.einsum("eq,eqkc->", wdet, (guh - gue) ** 2)
    return float(np.sqrt(l2sq)), float(np.sqrt(h1sq))

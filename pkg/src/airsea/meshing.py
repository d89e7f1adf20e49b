"""Two-domain triangulations with matching interface traces.

Two geometries are supported: a pair of stacked unit squares sharing the
segment y = 0, and a backward-facing-step channel (atmosphere) over a
rectangular ocean box.  Both are structured triangulations with alternating
diagonals; the interface edges of the two domains coincide exactly so that
interface integrals can pair discrete traces directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIRICHLET = "dirichlet"
INTERFACE = "interface"
OUTFLOW = "outflow"

ATMOSPHERE = 0
OCEAN = 1


@dataclass
class DomainMesh:
    """Conforming triangulation of one subdomain.

    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nb, 2) int array of vertex pairs on the boundary
    boundary_tags : (nb,) array of tag strings (dirichlet/interface/outflow)
    h : maximum triangle diameter
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    h: float = field(default=0.0)

    def __post_init__(self):
        if self.h == 0.0:
            self.h = float(triangle_diameters(self.vertices, self.triangles).max())

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass
class InterfacePair:
    """One matched pair of interface edges.

    ``edge_1``/``edge_2`` hold vertex ids in the respective domain, ordered so
    that position k of one edge coincides with position k of the other
    (shared parametrization).
    """

    edge_1: tuple[int, int]
    edge_2: tuple[int, int]
    aligned: bool = True


@dataclass
class CoupledMesh:
    """Two conforming triangulations joined along a shared interface."""

    domains: tuple[DomainMesh, DomainMesh]
    interface_pairs: list[InterfacePair]
    # structured cell size (triangle legs); diameters are sqrt(2) times this
    spacing: float = 0.0
    # outward interface normal of domain 1; both geometries have a horizontal
    # interface, so this is (0, -1) with domain 1 on top.
    interface_normal_1: tuple[float, float] = (0.0, -1.0)

    @property
    def h(self) -> tuple[float, float]:
        return (self.domains[0].h, self.domains[1].h)


class MeshError(ValueError):
    pass


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas (positive for counterclockwise triangles)."""
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_diameters(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    return np.maximum(e0, np.maximum(e1, e2))


def _structured_block(x: np.ndarray, y: np.ndarray, keep=None):
    """Triangulate the tensor grid ``x`` × ``y`` with alternating diagonals.

    ``keep(i, j)`` may exclude cells (used for the step cut-out).  Returns
    vertices, triangles and a lookup from grid index to vertex id.
    """
    nx, ny = len(x) - 1, len(y) - 1
    used = np.zeros((nx + 1, ny + 1), dtype=bool)
    cells = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep(i, j):
                continue
            cells.append((i, j))
            used[i:i + 2, j:j + 2] = True

    vid = -np.ones((nx + 1, ny + 1), dtype=int)
    verts = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            if used[i, j]:
                vid[i, j] = len(verts)
                verts.append((x[i], y[j]))

    tris = []
    for i, j in cells:
        a, b = vid[i, j], vid[i + 1, j]
        c, d = vid[i + 1, j + 1], vid[i, j + 1]
        if (i + j) % 2 == 0:
            # diagonal a-c
            tris.append((a, b, c))
            tris.append((a, c, d))
        else:
            # diagonal b-d
            tris.append((a, b, d))
            tris.append((b, c, d))
    return np.asarray(verts, dtype=float), np.asarray(tris, dtype=int), vid


def boundary_edges_of(triangles: np.ndarray) -> np.ndarray:
    """Edges appearing in exactly one triangle, oriented as in that triangle."""
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True,
                                   return_counts=True)
    return edges[counts[inverse] == 1]


def _tag_edges(vertices, edges, classify) -> np.ndarray:
    midpoints = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    return np.asarray([classify(x, y) for x, y in midpoints], dtype=object)


def _pair_interface_edges(mesh1: DomainMesh, mesh2: DomainMesh) -> list[InterfacePair]:
    """Match interface edges of the two domains by coordinates.

    Edges are stored with their vertices ordered by ascending x so both
    members of a pair share the same parametrization.
    """

    def sorted_edges(mesh):
        sel = mesh.boundary_tags == INTERFACE
        edges = mesh.boundary_edges[sel]
        out = []
        for v0, v1 in edges:
            if mesh.vertices[v0, 0] > mesh.vertices[v1, 0]:
                v0, v1 = v1, v0
            out.append((v0, v1))
        out.sort(key=lambda e: mesh.vertices[e[0], 0])
        return out

    e1, e2 = sorted_edges(mesh1), sorted_edges(mesh2)
    if len(e1) != len(e2):
        raise MeshError(f"interface edge count mismatch: {len(e1)} vs {len(e2)}")
    pairs = []
    for a, b in zip(e1, e2):
        pa = mesh1.vertices[list(a)]
        pb = mesh2.vertices[list(b)]
        if not np.array_equal(pa, pb):
            raise MeshError(f"interface edges do not coincide: {pa} vs {pb}")
        pairs.append(InterfacePair(edge_1=a, edge_2=b))
    return pairs


def generate_two_domain_mesh(n: int) -> CoupledMesh:
    """Stacked unit squares [0,1]x[0,1] over [0,1]x[-1,0], n cells per side.

    Each domain gets 2*n**2 triangles and (n+1)**2 vertices; the n matched
    interface pairs lie on y = 0.
    """
    if n < 1:
        raise MeshError(f"subdivision count must be >= 1, got {n}")
    grid = np.linspace(0.0, 1.0, n + 1)

    verts1, tris1, _ = _structured_block(grid, grid)
    verts2, tris2, _ = _structured_block(grid, grid - 1.0)

    def classify_top(x, y):
        return INTERFACE if abs(y) < 1e-12 else DIRICHLET

    def classify_bottom(x, y):
        return INTERFACE if abs(y) < 1e-12 else DIRICHLET

    be1 = boundary_edges_of(tris1)
    be2 = boundary_edges_of(tris2)
    mesh1 = DomainMesh(verts1, tris1, be1, _tag_edges(verts1, be1, classify_top))
    mesh2 = DomainMesh(verts2, tris2, be2, _tag_edges(verts2, be2, classify_bottom))
    return CoupledMesh((mesh1, mesh2), _pair_interface_edges(mesh1, mesh2),
                       spacing=1.0 / n)


# Step-channel geometry: inflow shelf [0,2]x[1,2] joined to the main channel
# [2,12]x[0,2] for the atmosphere; ocean box [2,12]x[-1,0]; interface on
# y = 0, 2 <= x <= 12.
STEP_X_END = 12.0
STEP_X_CORNER = 2.0
STEP_SHELF_Y = 1.0
STEP_TOP_Y = 2.0
STEP_OCEAN_BOTTOM = -1.0


def generate_step_mesh(h_target: float) -> CoupledMesh:
    """Backward-facing-step channel over an ocean box.

    The grid spacing is chosen as 1/m with m = round(sqrt(2)/h_target) so all
    triangle diameters stay within [0.7, 1.4] * h_target.
    """
    if not (0.0 < h_target <= 0.5):
        raise MeshError(f"h_target must lie in (0, 0.5], got {h_target}")
    m = max(3, round(np.sqrt(2.0) / h_target))
    s = 1.0 / m
    diam = np.sqrt(2.0) * s
    if not (0.7 * h_target <= diam <= 1.4 * h_target):
        raise MeshError(f"cannot honor diameter bounds for h_target={h_target}")

    x = np.linspace(0.0, STEP_X_END, int(STEP_X_END * m) + 1)
    y_atm = np.linspace(0.0, STEP_TOP_Y, int(STEP_TOP_Y * m) + 1)

    def keep_atm(i, j):
        # exclude cells inside the step rectangle [0,2]x[0,1]
        cx = 0.5 * (x[i] + x[i + 1])
        cy = 0.5 * (y_atm[j] + y_atm[j + 1])
        return not (cx < STEP_X_CORNER and cy < STEP_SHELF_Y)

    verts1, tris1, _ = _structured_block(x, y_atm, keep=keep_atm)

    # share the x grid so interface coordinates coincide bit for bit
    x_oc = x[int(STEP_X_CORNER * m):]
    y_oc = np.linspace(STEP_OCEAN_BOTTOM, 0.0, m + 1)
    verts2, tris2, _ = _structured_block(x_oc, y_oc)

    tol = 1e-9

    def classify_atm(px, py):
        if abs(py) < tol and px > STEP_X_CORNER:
            return INTERFACE
        if abs(py - STEP_TOP_Y) < tol or abs(px - STEP_X_END) < tol:
            return OUTFLOW
        # inlet, shelf floor and step face are strongly imposed
        return DIRICHLET

    def classify_ocean(px, py):
        if abs(py) < tol:
            return INTERFACE
        if abs(px - STEP_X_END) < tol:
            return OUTFLOW
        return DIRICHLET

    be1 = boundary_edges_of(tris1)
    be2 = boundary_edges_of(tris2)
    mesh1 = DomainMesh(verts1, tris1, be1, _tag_edges(verts1, be1, classify_atm))
    mesh2 = DomainMesh(verts2, tris2, be2, _tag_edges(verts2, be2, classify_ocean))
    return CoupledMesh((mesh1, mesh2), _pair_interface_edges(mesh1, mesh2),
                       spacing=s)


def validate(mesh: CoupledMesh) -> None:
    """Check orientation, tag partition, Euler's formula and trace matching."""
    for dom in mesh.domains:
        areas = triangle_areas(dom.vertices, dom.triangles)
        if not (areas > 0).all():
            raise MeshError("triangle with non-positive signed area")
        boundary = boundary_edges_of(dom.triangles)
        if len(boundary) != len(dom.boundary_edges):
            raise MeshError("boundary edge list does not cover the boundary")
        known = {DIRICHLET, INTERFACE, OUTFLOW}
        if not set(dom.boundary_tags) <= known:
            raise MeshError(f"unknown boundary tag in {set(dom.boundary_tags)}")
        v = dom.num_vertices
        f = dom.num_triangles
        e = _count_edges(dom.triangles)
        if v - e + f != 1:
            raise MeshError(f"Euler check failed: V-E+F = {v - e + f}")
    seen1, seen2 = set(), set()
    for pair in mesh.interface_pairs:
        p1 = mesh.domains[0].vertices[list(pair.edge_1)]
        p2 = mesh.domains[1].vertices[list(pair.edge_2)]
        if not np.array_equal(p1, p2):
            raise MeshError("interface pair endpoints differ")
        key1 = tuple(sorted(pair.edge_1))
        key2 = tuple(sorted(pair.edge_2))
        if key1 in seen1 or key2 in seen2:
            raise MeshError("interface edge used by more than one pair")
        seen1.add(key1)
        seen2.add(key2)


def _count_edges(triangles: np.ndarray) -> int:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    return len(np.unique(np.sort(edges, axis=1), axis=0))

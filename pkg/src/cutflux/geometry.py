"""Level sets, cut-cell classification and quadrature on cut geometry.

Region 1 is ``{phi < 0}`` and region 2 is ``{phi >= 0}``. Inside every cut
triangle the interface is the straight segment joining the zeros of the
linear interpolant of ``phi`` on the two cut edges.
"""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from .mesh import BOUNDARY
from .quadrature import QuadratureRule, line_rule, map_segment, map_triangle, triangle_rule

SNAP_FACTOR = 1e-10


class ElementClass(IntEnum):
    IN_1 = 1
    IN_2 = 2
    CUT = 3


class DegenerateInterfaceError(ValueError):
    """All vertex values of an element vanish to within the snap tolerance."""


@dataclass(frozen=True)
class LevelSet:
    """Scalar level-set function with an optional analytic gradient.

    ``func(x, y)`` and ``grad(x, y)`` must accept numpy arrays; ``grad``
    returns an array with a trailing axis of length 2.
    """

    func: Callable
    grad: Optional[Callable] = None
    name: str = "custom"

    def __call__(self, x, y):
        return self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def gradient(self, x, y):
        if self.grad is None:
            raise ValueError(f"level set {self.name!r} has no analytic gradient")
        return self.grad(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    @classmethod
    def from_name(cls, name):
        """Parse ``"petal"``, ``"vertical_line:<c>"``, ``"circle:<r>"`` or ``"constant:<v>"``."""
        kind, _, arg = name.partition(":")
        kind = kind.strip().lower()
        if kind == "petal":
            return petal_level_set()
        if kind == "vertical_line":
            return vertical_line(float(arg))
        if kind == "circle":
            return circle(float(arg))
        if kind == "constant":
            c = float(arg) if arg else 1.0
            return LevelSet(lambda x, y: np.full(np.broadcast(x, y).shape, c),
                            lambda x, y: np.zeros(np.broadcast(x, y).shape + (2,)), f"constant:{c:g}")
        raise ValueError(f"unknown level set {name!r}")


def petal_level_set():
    """``(x^2 + y^2)^2 (1 + 0.5 sin(12 theta)) - 0.3`` with ``theta = atan2(y, x)``."""

    def func(x, y):
        r2 = x * x + y * y
        return r2 * r2 * (1.0 + 0.5 * np.sin(12.0 * np.arctan2(y, x))) - 0.3

    def grad(x, y):
        r2 = x * x + y * y
        th = np.arctan2(y, x)
        g = 1.0 + 0.5 * np.sin(12.0 * th)
        dg = 6.0 * np.cos(12.0 * th)
        # radial 4 r^3 g, angular r^3 g'
        gx = 4.0 * r2 * g * x - r2 * dg * y
        gy = 4.0 * r2 * g * y + r2 * dg * x
        return np.stack([gx, gy], axis=-1)

    return LevelSet(func, grad, "petal")


def vertical_line(c):
    return LevelSet(lambda x, y: x - c,
                    lambda x, y: np.stack(np.broadcast_arrays(np.ones_like(x), np.zeros_like(y)), axis=-1),
                    f"vertical_line:{c:g}")


def circle(r):
    return LevelSet(lambda x, y: x * x + y * y - r * r,
                    lambda x, y: np.stack(np.broadcast_arrays(2.0 * x, 2.0 * y), axis=-1),
                    f"circle:{r:g}")


@dataclass
class CutTopology:
    """Interface classification of a mesh.

    Per-region containers are lists indexed by ``region - 1``.

    Attributes
    ----------
    phi : snapped vertex values of the level set.
    classes : (nt,) :class:`ElementClass` codes.
    elements : region -> bool mask of ``T_h^i`` (elements meeting region i).
    touching_edges : region -> bool mask of edges meeting region i.
    active_edges : region -> bool mask of edges carrying region-i couplings:
        interior edges whose two neighbours are in ``T_h^i`` and boundary
        edges of elements in ``T_h^i``.
    ghost_edges : region -> interior active edges with a cut neighbour.
    cut_edges : edges crossed by the interface.
    edge_interval : region -> (ne, 2) parameter range ``[t0, t1]`` of
        ``F cap region`` along the edge from ``edges[:, 0]`` to ``edges[:, 1]``.
    region_area : region -> (nt,) area of ``T cap region``.
    cut_ids : ids of cut elements; the arrays below are aligned with it.
    lone_local : local index of the vertex alone on its side (A1).
    lone_region : region (1 or 2) containing A1.
    M, N : intersection points on edges A1A2 and A1A3.
    gamma_length, gamma_normal : length and unit normal (region 1 -> 2) of the segment.
    hmin : shortest of the four sub-segments of the two cut edges.
    """

    mesh: object
    phi: np.ndarray
    classes: np.ndarray
    elements: list
    touching_edges: list
    active_edges: list
    ghost_edges: list
    cut_edges: np.ndarray
    edge_interval: list
    region_area: list
    cut_ids: np.ndarray
    lone_local: np.ndarray
    lone_region: np.ndarray
    M: np.ndarray
    N: np.ndarray
    gamma_length: np.ndarray
    gamma_normal: np.ndarray
    hmin: np.ndarray
    cut_position: np.ndarray = field(repr=False, default=None)

    @property
    def n_cut(self):
        return len(self.cut_ids)

    def vertex_region(self):
        return np.where(self.phi < 0.0, 1, 2)

    def cut_vertices(self):
        """(n_cut, 3) vertex ids ordered A1, A2, A3."""
        tri = self.mesh.triangles[self.cut_ids]
        l = self.lone_local
        r = np.arange(len(l))
        return np.column_stack([tri[r, l], tri[r, (l + 1) % 3], tri[r, (l + 2) % 3]])

    def region_cells(self, region):
        """Sub-triangles covering ``region``.

        Returns ``(elem, coords)`` with ``coords`` of shape (m, 3, 2); uncut
        elements contribute themselves, cut elements one or two pieces.
        """
        mesh = self.mesh
        full = np.flatnonzero(self.classes == region)
        elem = [full]
        coords = [mesh.vertices[mesh.triangles[full]]]
        if self.n_cut:
            A = mesh.vertices[self.cut_vertices()]
            tri_side = self.lone_region == region
            c = self.cut_ids
            elem.append(c[tri_side])
            coords.append(np.stack([A[tri_side, 0], self.M[tri_side], self.N[tri_side]], axis=1))
            q = ~tri_side
            elem.append(c[q])
            coords.append(np.stack([self.M[q], A[q, 1], A[q, 2]], axis=1))
            elem.append(c[q])
            coords.append(np.stack([self.M[q], A[q, 2], self.N[q]], axis=1))
        return np.concatenate(elem), np.concatenate(coords)

    def region_quadrature(self, region, degree):
        """Vectorised rule over all of ``region``: ``(elem, points, weights)``.

        ``points`` has shape (m, q, 2); ``elem`` gives the background element
        of each sub-cell.
        """
        elem, coords = self.region_cells(region)
        pts, w = map_triangle(coords, degree)
        return elem, pts, w

    def interface_quadrature_all(self, degree):
        """Gauss points on every interface segment: ``(points (nc, q, 2), weights, t)``."""
        t, _ = line_rule(degree)
        pts, w = map_segment(self.M, self.N, degree)
        return pts, w, t

    def cut_index(self):
        """Map element id -> position in ``cut_ids`` (-1 if uncut)."""
        return self.cut_position


def classify_cells(mesh, level_set):
    """Classify every element of ``mesh`` against ``level_set``.

    Vertex values with ``|phi| <`` the snap tolerance are moved to the
    positive side so every cut element has exactly two edge intersections.
    """
    verts = mesh.vertices
    phi = np.asarray(level_set(verts[:, 0], verts[:, 1]), dtype=float)
    if phi.shape != (mesh.n_vertices,):
        phi = np.broadcast_to(phi, (mesh.n_vertices,)).copy()
    if not np.all(np.isfinite(phi)):
        raise ValueError("level set is not finite at every vertex")

    if level_set.grad is not None:
        hv = np.zeros(mesh.n_vertices)
        np.maximum.at(hv, mesh.triangles.ravel(), np.repeat(mesh.diameters, 3))
        g = np.linalg.norm(level_set.gradient(verts[:, 0], verts[:, 1]), axis=-1)
        tol = SNAP_FACTOR * hv * g
    else:
        tol = np.full(mesh.n_vertices, SNAP_FACTOR)
    near = np.abs(phi) < tol
    elem_near = near[mesh.triangles].all(axis=1)
    if np.any(elem_near):
        raise DegenerateInterfaceError(
            f"interface degenerate on elements {np.flatnonzero(elem_near)[:10].tolist()}")
    phi = np.where(near, tol, phi)
    zero = phi == 0.0
    phi[zero] = np.finfo(float).tiny

    neg = phi < 0.0
    nneg = neg[mesh.triangles].sum(axis=1)
    classes = np.full(mesh.n_triangles, int(ElementClass.CUT))
    classes[nneg == 3] = ElementClass.IN_1
    classes[nneg == 0] = ElementClass.IN_2
    cut = np.flatnonzero(classes == ElementClass.CUT)

    tri = mesh.triangles[cut]
    sneg = neg[tri]
    lone = np.where(nneg[cut] == 1, np.argmax(sneg, axis=1), np.argmin(sneg, axis=1))
    r = np.arange(len(cut))
    a1, a2, a3 = tri[r, lone], tri[r, (lone + 1) % 3], tri[r, (lone + 2) % 3]
    lone_region = np.where(neg[a1], 1, 2)
    t_m = phi[a1] / (phi[a1] - phi[a2])
    t_n = phi[a1] / (phi[a1] - phi[a3])
    P1, P2, P3 = verts[a1], verts[a2], verts[a3]
    M = P1 + t_m[:, None] * (P2 - P1)
    N = P1 + t_n[:, None] * (P3 - P1)
    seg = N - M
    gamma_length = np.linalg.norm(seg, axis=1)
    g = np.einsum("ij,ijd->id", phi[tri], mesh.bary_grads[cut])
    gamma_normal = g / np.linalg.norm(g, axis=1)[:, None]
    l12 = np.linalg.norm(P2 - P1, axis=1)
    l13 = np.linalg.norm(P3 - P1, axis=1)
    hmin = np.min(np.column_stack([t_m * l12, (1 - t_m) * l12, t_n * l13, (1 - t_n) * l13]), axis=1)

    vreg = np.where(neg, 1, 2)
    e0, e1 = mesh.edges[:, 0], mesh.edges[:, 1]
    crossing = vreg[e0] != vreg[e1]
    t_star = np.where(crossing, phi[e0] / np.where(crossing, phi[e0] - phi[e1], 1.0), 0.0)
    intervals = []
    touching = []
    for region in (1, 2):
        iv = np.zeros((mesh.n_edges, 2))
        both = (vreg[e0] == region) & (vreg[e1] == region)
        iv[both] = (0.0, 1.0)
        first = crossing & (vreg[e0] == region)
        iv[first, 1] = t_star[first]
        second = crossing & (vreg[e1] == region)
        iv[second, 0] = t_star[second]
        iv[second, 1] = 1.0
        intervals.append(iv)
        touching.append(both | crossing)

    elements = [classes != ElementClass.IN_2, classes != ElementClass.IN_1]
    is_cut = classes == ElementClass.CUT
    tm, tp = mesh.edge_elements[:, 0], mesh.edge_elements[:, 1]
    interior = tp != BOUNDARY
    tp_safe = np.where(interior, tp, tm)
    active, ghost = [], []
    for region in (1, 2):
        el = elements[region - 1]
        act = el[tm] & el[tp_safe]
        active.append(act)
        ghost.append(act & interior & (is_cut[tm] | is_cut[tp_safe]))

    region_area = []
    area_tri = 0.5 * np.abs((M - P1)[:, 0] * (N - P1)[:, 1] - (M - P1)[:, 1] * (N - P1)[:, 0])
    for region in (1, 2):
        ra = np.where(classes == region, mesh.areas, 0.0)
        ra[cut] = np.where(lone_region == region, area_tri, mesh.areas[cut] - area_tri)
        region_area.append(ra)

    position = np.full(mesh.n_triangles, -1)
    position[cut] = np.arange(len(cut))
    return CutTopology(
        mesh=mesh, phi=phi, classes=classes, elements=elements, touching_edges=touching,
        active_edges=active, ghost_edges=ghost, cut_edges=crossing, edge_interval=intervals,
        region_area=region_area, cut_ids=cut, lone_local=lone, lone_region=lone_region,
        M=M, N=N, gamma_length=gamma_length, gamma_normal=gamma_normal, hmin=hmin,
        cut_position=position,
    )


def subcell_quadrature(cut, element, region, degree):
    """Quadrature rule on ``element cap region`` (``region`` is 1, 2 or ``"whole"``)."""
    mesh = cut.mesh
    if not 0 <= element < mesh.n_triangles:
        raise ValueError(f"unknown element {element}")
    triangle_rule(degree)
    if region == "whole" or region == 0:
        coords = mesh.vertices[mesh.triangles[element]][None]
    elif region in (1, 2):
        elem, all_coords = cut.region_cells(region)
        coords = all_coords[elem == element]
    else:
        raise ValueError(f"invalid region {region!r}")
    if len(coords) == 0:
        return QuadratureRule(np.zeros((0, 2)), np.zeros(0), degree)
    pts, w = map_triangle(coords, degree)
    return QuadratureRule(pts.reshape(-1, 2), w.ravel(), degree)


def interface_quadrature(cut, element, degree):
    """Gauss-Legendre rule on the interface segment of a cut element."""
    pos = cut.cut_position[element] if 0 <= element < cut.mesh.n_triangles else -1
    if pos < 0:
        raise ValueError(f"element {element} is not cut by the interface")
    pts, w = map_segment(cut.M[pos:pos + 1], cut.N[pos:pos + 1], degree)
    return QuadratureRule(pts[0], w[0], degree)


def write_topology_csv(cut, path):
    """Debug dump: element id, class, interface length, h_min."""
    gl = np.zeros(cut.mesh.n_triangles)
    hm = np.zeros(cut.mesh.n_triangles)
    gl[cut.cut_ids] = cut.gamma_length
    hm[cut.cut_ids] = cut.hmin
    with open(path, "w") as fh:
        fh.write("element,class,gamma_length,hmin\n")
        for e in range(cut.mesh.n_triangles):
            fh.write(f"{e},{ElementClass(cut.classes[e]).name},{gl[e]:.16e},{hm[e]:.16e}\n")

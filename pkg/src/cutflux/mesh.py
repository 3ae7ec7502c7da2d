"""Conforming triangular meshes with oriented edge topology.

Triangles are stored counterclockwise with the refinement edge opposite the
local vertex 0 (the newest vertex), which is the convention used by
:func:`refine`. Local edge ``j`` of a triangle is the edge opposite local
vertex ``j``.

Example
-------
>>> m = build_structured_mesh(2, 2, (-1.0, 1.0, -1.0, 1.0))
>>> m.n_vertices, m.n_triangles, m.n_edges
(9, 8, 16)
"""
import numpy as np

BOUNDARY = -1

_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    """Raised on invalid mesh input or a violated mesh invariant."""


class TriangleMesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, counterclockwise, newest vertex first.
    parent : (nt,) int array, optional
        Index of the parent triangle in the mesh this one was refined from.

    Attributes
    ----------
    edges : (ne, 2) int array of vertex ids, sorted ascending per edge.
    edge_elements : (ne, 2) int array ``[T_minus, T_plus]``; ``T_plus`` is
        ``BOUNDARY`` for boundary edges.
    element_edges : (nt, 3) edge id of each local edge.
    edge_sign : (nt, 3) +1 if the triangle is ``T_minus`` of that edge, else -1.
    normals : (ne, 2) unit normal pointing from ``T_minus`` into ``T_plus``
        (outward on the boundary).
    edge_lengths, areas, diameters, centroids, bary_grads
    """

    def __init__(self, vertices, triangles, parent=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle references an unknown vertex")
        nt = len(self.triangles)
        self.parent = np.arange(nt) if parent is None else np.asarray(parent, dtype=np.int64)

        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        self.signed_areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(self.signed_areas <= 0.0):
            raise MeshError("triangles must be counterclockwise with positive area")
        self.areas = self.signed_areas
        self.centroids = p.mean(axis=1)

        # grad(lambda_j) = rot(p_{j+2} - p_{j+1}) / (2|T|)
        q1 = p[:, [1, 2, 0]]
        q2 = p[:, [2, 0, 1]]
        d = q2 - q1
        self.bary_grads = np.stack([-d[..., 1], d[..., 0]], axis=-1) / (2.0 * self.areas[:, None, None])

        self._build_edges()
        lengths = self.edge_lengths[self.element_edges]
        self.diameters = lengths.max(axis=1)
        for arr in (self.vertices, self.triangles, self.parent):
            arr.flags.writeable = False

    def _build_edges(self):
        nt = len(self.triangles)
        pairs = self.triangles[:, _LOCAL_EDGES]
        keys = np.sort(pairs, axis=2).reshape(-1, 2)
        edges, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        counts = np.bincount(inv, minlength=len(edges))
        if np.any(counts > 2):
            raise MeshError("non-manifold mesh: an edge is shared by more than two triangles")
        order = np.argsort(inv, kind="stable")
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        first = order[start]
        second = np.where(counts == 2, order[np.minimum(start + 1, len(order) - 1)], -1)

        self.edges = edges
        self.element_edges = inv.reshape(nt, 3)
        elem_of = np.repeat(np.arange(nt), 3)
        self.edge_elements = np.column_stack(
            [elem_of[first], np.where(second >= 0, elem_of[np.maximum(second, 0)], BOUNDARY)]
        )
        sign = np.full(3 * nt, -1, dtype=np.int64)
        sign[first] = 1
        self.edge_sign = sign.reshape(nt, 3)

        # outward normal of T_minus on its local edge
        loc = first % 3
        tm = elem_of[first]
        a = self.vertices[self.triangles[tm, _LOCAL_EDGES[loc, 0]]]
        b = self.vertices[self.triangles[tm, _LOCAL_EDGES[loc, 1]]]
        t = b - a
        self.edge_lengths = np.linalg.norm(t, axis=1)
        self.normals = np.column_stack([t[:, 1], -t[:, 0]]) / self.edge_lengths[:, None]

        self.boundary_edges = self.edge_elements[:, 1] == BOUNDARY
        self.boundary_vertices = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_vertices[self.edges[self.boundary_edges].ravel()] = True

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def vertex_elements(self):
        """CSR-like map vertex -> incident triangles as a list of arrays."""
        tri = self.triangles.ravel()
        elem = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(tri, kind="stable")
        splits = np.cumsum(np.bincount(tri, minlength=self.n_vertices))[:-1]
        return np.split(elem[order], splits)

    def barycentric(self, elements, points):
        """Barycentric coordinates of ``points`` in ``elements``.

        ``elements`` has shape (m,) and ``points`` shape (m, 2) or (m, q, 2);
        the result has shape (m, 3) or (m, q, 3).
        """
        elements = np.asarray(elements)
        points = np.asarray(points, dtype=float)
        x0 = self.vertices[self.triangles[elements, 0]]
        g = self.bary_grads[elements, 1:]
        if points.ndim == 3:
            l12 = np.einsum("mjd,mqd->mqj", g, points - x0[:, None, :])
        else:
            l12 = np.einsum("mjd,md->mj", g, points - x0)
        return np.concatenate([1.0 - l12.sum(axis=-1, keepdims=True), l12], axis=-1)

    def check(self):
        """Verify all mesh invariants; raise :class:`MeshError` on failure."""
        if np.any(self.signed_areas <= 0):
            raise MeshError("non-positive triangle area")
        interior = ~self.boundary_edges
        tm, tp = self.edge_elements[interior].T
        d = self.centroids[tp] - self.centroids[tm]
        if np.any(np.einsum("ij,ij->i", d, self.normals[interior]) <= 0):
            raise MeshError("edge normal does not point from T_minus to T_plus")
        bd = self.boundary_edges
        out = self.vertices[self.edges[bd]].mean(axis=1) - self.centroids[self.edge_elements[bd, 0]]
        if np.any(np.einsum("ij,ij->i", out, self.normals[bd]) <= 0):
            raise MeshError("boundary normal is not outward")
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        bverts = self.vertices[self.edges[bd]].reshape(-1, 2)
        scale = np.max(hi - lo)
        on_box = (
            (np.abs(bverts[:, 0] - lo[0]) < 1e-12 * scale)
            | (np.abs(bverts[:, 0] - hi[0]) < 1e-12 * scale)
            | (np.abs(bverts[:, 1] - lo[1]) < 1e-12 * scale)
            | (np.abs(bverts[:, 1] - hi[1]) < 1e-12 * scale)
        )
        if not np.all(on_box):
            raise MeshError("hanging node: a boundary edge lies inside the domain")
        used = np.unique(self.triangles)
        euler = len(used) - self.n_edges + self.n_triangles + 1
        if euler != 2:
            raise MeshError(f"Euler relation violated (V - E + F = {euler})")
        return True

    def min_angle(self):
        """Smallest interior angle over all triangles, in radians."""
        p = self.vertices[self.triangles]
        angles = []
        for j in range(3):
            u = p[:, (j + 1) % 3] - p[:, j]
            v = p[:, (j + 2) % 3] - p[:, j]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.min(angles))


def build_structured_mesh(nx, ny, domain=(0.0, 1.0, 0.0, 1.0)):
    """Split an ``nx`` by ``ny`` grid of the rectangle ``(x0, x1, y0, y1)``.

    Every square is cut by its bottom-left to top-right diagonal, which is
    also the refinement edge of both halves.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError("cell counts must be positive integers")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    p00 = j * (nx + 1) + i
    p10 = p00 + 1
    p01 = p00 + nx + 1
    p11 = p01 + 1
    lower = np.column_stack([p10, p11, p00])
    upper = np.column_stack([p01, p00, p11])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return TriangleMesh(vertices, triangles)


def refine(mesh, marked, mode="newest"):
    """Newest-vertex bisection of the ``marked`` triangles with conforming closure.

    With ``mode="newest"`` the refinement edge of every marked triangle is
    split; ``mode="bisec3"`` splits all three edges, so each marked triangle
    ends up with four children. The returned mesh has ``parent`` set to the
    index of the originating triangle in ``mesh``.
    """
    if mode not in ("newest", "bisec3"):
        raise ValueError(f"unknown refinement mode {mode!r}")
    marked = np.unique(np.asarray(list(marked) if isinstance(marked, (set, frozenset)) else marked, dtype=np.int64))
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.n_triangles):
        raise ValueError("marked element id out of range")
    if marked.size == 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy())

    E = mesh.element_edges
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[E[marked, 0] if mode == "newest" else E[marked].ravel()] = True
    while True:
        need = edge_marked[E].any(axis=1) & ~edge_marked[E[:, 0]]
        if not need.any():
            break
        edge_marked[E[need, 0]] = True

    nv = mesh.n_vertices
    mid = np.full(mesh.n_edges, -1, dtype=np.int64)
    split = np.flatnonzero(edge_marked)
    mid[split] = nv + np.arange(len(split))
    new_vertices = np.vstack([mesh.vertices, mesh.vertices[mesh.edges[split]].mean(axis=1)])

    tri = mesh.triangles
    keep = ~edge_marked[E[:, 0]]
    parts = [(np.flatnonzero(keep), 0, tri[keep])]
    bis = np.flatnonzero(~keep)
    a, b, c = tri[bis].T
    m = mid[E[bis, 0]]
    f2 = edge_marked[E[bis, 2]]  # edge a-b
    f1 = edge_marked[E[bis, 1]]  # edge c-a
    m2 = mid[E[bis, 2]]
    m1 = mid[E[bis, 1]]

    child = np.column_stack([m, a, b])
    parts.append((bis[~f2], 0, child[~f2]))
    parts.append((bis[f2], 0, np.column_stack([m2, m, a])[f2]))
    parts.append((bis[f2], 1, np.column_stack([m2, b, m])[f2]))
    child = np.column_stack([m, c, a])
    parts.append((bis[~f1], 2, child[~f1]))
    parts.append((bis[f1], 2, np.column_stack([m1, m, c])[f1]))
    parts.append((bis[f1], 3, np.column_stack([m1, a, m])[f1]))

    parent = np.concatenate([p[0] for p in parts])
    slot = np.concatenate([np.full(len(p[0]), p[1]) for p in parts])
    tris = np.vstack([p[2] for p in parts])
    order = np.lexsort((slot, parent))
    out = TriangleMesh(new_vertices, tris[order], parent=parent[order])
    out.check()
    return out


def uniform_refine(mesh, times=1):
    """Bisect every triangle ``times`` times (doubles the element count each pass)."""
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_triangles))
    return mesh


def edge_patch(mesh, node):
    """Edges meeting ``node`` in counterclockwise order with their orientation signs.

    The sign is +1 when the edge normal equals the 90-degree clockwise
    rotation of the unit tangent pointing from ``node`` along the edge.

    Returns
    -------
    edges : int array
    signs : int array of +1/-1
    """
    if not 0 <= node < mesh.n_vertices:
        raise ValueError(f"invalid vertex id {node}")
    ids = np.flatnonzero((mesh.edges == node).any(axis=1))
    other = np.where(mesh.edges[ids, 0] == node, mesh.edges[ids, 1], mesh.edges[ids, 0])
    t = mesh.vertices[other] - mesh.vertices[node]
    t /= np.linalg.norm(t, axis=1)[:, None]
    order = np.argsort(np.arctan2(t[:, 1], t[:, 0]), kind="stable")
    ids, t = ids[order], t[order]
    cw = np.column_stack([t[:, 1], -t[:, 0]])
    signs = np.where(np.einsum("ij,ij->i", cw, mesh.normals[ids]) > 0, 1, -1)
    return ids, signs


def read_mesh(path):
    """Read the plain text format written by :func:`write_mesh`.

    Layout: vertex count, one ``x y`` line per vertex, triangle count, one
    ``i j k`` line per triangle (0-based). Clockwise triangles are reoriented.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0
    nv = int(tokens[pos])
    pos += 1
    vertices = np.array(tokens[pos:pos + 2 * nv], dtype=float).reshape(nv, 2)
    pos += 2 * nv
    nt = int(tokens[pos])
    pos += 1
    triangles = np.array(tokens[pos:pos + 3 * nt], dtype=np.int64).reshape(nt, 3)
    p = vertices[triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    triangles[cw] = triangles[cw][:, [0, 2, 1]]
    return TriangleMesh(vertices, triangles)


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"{mesh.n_triangles}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")

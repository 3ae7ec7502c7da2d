"""Raviart-Thomas flux recovery of order 0 or 1.

The flux is defined edge by edge through its normal moments against
``q0 = 1`` and ``q1 = 2t - 1`` (``t`` runs from ``edges[:, 0]`` to
``edges[:, 1]``, normal ``n_F``), and for order 1 through its moments against
``e_x`` and ``e_y`` on every element. Both neighbours of an edge receive the
same moments, so the normal trace is single-valued.

Local basis (``xi = (x - c_T) / h_T``)::

    m = 0: (1, 0), (0, 1), (xi1, xi2)
    m = 1: (1, 0), (xi1, 0), (xi2, 0), (0, 1), (0, xi1), (0, xi2),
           (xi1^2, xi1 xi2), (xi1 xi2, xi2^2)
"""
import logging

import numpy as np

from .mesh import BOUNDARY
from .primal import assemble_load
from .quadrature import line_rule, map_triangle

log = logging.getLogger(__name__)


def n_basis(order):
    return 3 if order == 0 else 8


def _basis(order, xi):
    """RT basis values (..., nb, 2) at local coordinates ``xi`` (..., 2)."""
    x, y = xi[..., 0], xi[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if order == 0:
        comps = [(one, zero), (zero, one), (x, y)]
    else:
        comps = [(one, zero), (x, zero), (y, zero), (zero, one), (zero, x), (zero, y),
                 (x * x, x * y), (x * y, y * y)]
    return np.stack([np.stack(c, axis=-1) for c in comps], axis=-2)


def _basis_div(order, xi, h):
    """Divergences (..., nb) of the basis functions."""
    x, y = xi[..., 0], xi[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if order == 0:
        d = [zero, zero, 2.0 * one]
    else:
        d = [zero, one, zero, zero, zero, one, 3.0 * x, 3.0 * y]
    return np.stack(d, axis=-1) / h[(...,) + (None,) * (x.ndim - h.ndim + 1)]


def _edge_test(order, t):
    return np.stack([np.ones_like(t), 2.0 * t - 1.0], axis=-1)[..., : order + 1]


def _poly_moment(order, t0, t1):
    """``int_{t0}^{t1} q_k(t) dt`` for the edge test functions."""
    out = [t1 - t0]
    if order == 1:
        out.append((t1**2 - t1) - (t0**2 - t0))
    return np.stack(out, axis=-1)


def moment_matrices(mesh, order):
    """Per-element map (nt, nb, nb) from basis coefficients to dof moments."""
    nt = mesh.n_triangles
    nq = order + 1
    h = mesh.diameters
    c = mesh.centroids
    t, w = line_rule(2 * order + 2)
    rows = []
    for j in range(3):
        e = mesh.element_edges[:, j]
        a = mesh.vertices[mesh.edges[e, 0]]
        b = mesh.vertices[mesh.edges[e, 1]]
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        xi = (pts - c[:, None, :]) / h[:, None, None]
        phin = np.einsum("mqbd,md->mqb", _basis(order, xi), mesh.normals[e])
        q = _edge_test(order, np.broadcast_to(t, (nt, len(t))))
        rows.append(np.einsum("q,mqk,mqb->mkb", w, q, phin) * mesh.edge_lengths[e][:, None, None])
    if order == 1:
        coords = mesh.vertices[mesh.triangles]
        pts, wq = map_triangle(coords, 2)
        xi = (pts - c[:, None, :]) / h[:, None, None]
        rows.append(np.einsum("mq,mqbd->mdb", wq, _basis(order, xi)))
    A = np.concatenate(rows, axis=1)
    assert A.shape == (nt, 3 * nq + (2 if order else 0), n_basis(order))
    return A


class FluxField:
    """Elementwise RT polynomials of order 0 or 1.

    Attributes
    ----------
    order : int
    edge_moments : (ne, order + 1) normal moments against ``q0, q1``.
    interior_moments : (nt, 2) moments against ``e_x, e_y`` (order 1 only).
    coeffs : (nt, nb) local basis coefficients.
    condition : (nt,) condition numbers of the moment maps.
    """

    def __init__(self, mesh, order, edge_moments, interior_moments=None):
        self.mesh = mesh
        self.order = order
        self.edge_moments = np.asarray(edge_moments, dtype=float).reshape(mesh.n_edges, order + 1)
        self.interior_moments = interior_moments
        A = moment_matrices(mesh, order)
        rhs = [self.edge_moments[mesh.element_edges[:, j]] for j in range(3)]
        if order == 1:
            rhs.append(np.asarray(interior_moments, dtype=float))
        rhs = np.concatenate(rhs, axis=1)
        # edge rows scale like h_F, interior rows like h_T^2
        rs = np.repeat(1.0 / mesh.edge_lengths[mesh.element_edges], order + 1, axis=1)
        if order == 1:
            rs = np.concatenate([rs, np.repeat(mesh.diameters[:, None] ** -2, 2, axis=1)], axis=1)
        A = A * rs[:, :, None]
        rhs = rhs * rs
        self.coeffs = np.linalg.solve(A, rhs[..., None])[..., 0]
        self.condition = np.linalg.cond(A)
        if not np.all(np.isfinite(self.condition)):
            raise np.linalg.LinAlgError("singular RT moment map")
        log.debug("RT%d moment map condition number: max %.3e", order, self.condition.max())

    def _xi(self, elems, points):
        c = self.mesh.centroids[elems]
        h = self.mesh.diameters[elems]
        if points.ndim == 3:
            return (points - c[:, None, :]) / h[:, None, None]
        return (points - c) / h[:, None]

    def evaluate(self, elems, points):
        """Values (m, 2) or (m, q, 2) of the flux on elements ``elems``."""
        elems = np.asarray(elems)
        points = np.asarray(points, dtype=float)
        phi = _basis(self.order, self._xi(elems, points))
        cf = self.coeffs[elems]
        if points.ndim == 3:
            return np.einsum("mqbd,mb->mqd", phi, cf)
        return np.einsum("mbd,mb->md", phi, cf)

    def divergence(self, elems, points):
        elems = np.asarray(elems)
        points = np.asarray(points, dtype=float)
        h = self.mesh.diameters[elems]
        dv = _basis_div(self.order, self._xi(elems, points), h)
        cf = self.coeffs[elems]
        if points.ndim == 3:
            return np.einsum("mqb,mb->mq", dv, cf)
        return np.einsum("mb,mb->m", dv, cf)

    def centroid_values(self):
        nt = self.mesh.n_triangles
        return self.evaluate(np.arange(nt), self.mesh.centroids)


def eval_flux(sigma, element, point, tol=1e-12):
    """Flux value of ``element`` at ``point``; the point must lie in the element."""
    point = np.asarray(point, dtype=float)
    lam = sigma.mesh.barycentric(np.array([element]), point[None, :])[0]
    if lam.min() < -tol:
        raise ValueError(f"point {point} lies outside element {element}")
    return sigma.evaluate(np.array([element]), point[None, :])[0]


def _edge_traces(u_h, K):
    """Per region: (ne,) average normal flux ``<k_i grad u^i . n_F>`` on active edges."""
    mesh = u_h.mesh
    out = []
    for region in (1, 2):
        g = K.k(region) * u_h.gradient(region)
        tm, tp = mesh.edge_elements.T
        gm = np.einsum("md,md->m", g[tm], mesh.normals)
        gp = np.einsum("md,md->m", g[np.where(tp == BOUNDARY, tm, tp)], mesh.normals)
        both = (tp != BOUNDARY) & np.isfinite(gp)
        out.append(np.where(both, 0.5 * (gm + gp), gm))
    return out


def edge_moments(u_h, theta, K, order):
    """Normal moments of the recovered flux on every edge."""
    mesh, cut = u_h.mesh, u_h.cut
    h = mesh.edge_lengths
    mom = np.zeros((mesh.n_edges, order + 1))
    traces = _edge_traces(u_h, K)
    for region in (1, 2):
        act = np.flatnonzero(cut.active_edges[region - 1])
        t0, t1 = cut.edge_interval[region - 1][act].T
        flux = traces[region - 1][act]
        part = flux[:, None] * h[act, None] * _poly_moment(order, t0, t1)
        part = np.where(np.isfinite(part), part, 0.0)
        th = theta.edge_values(region)[act]
        b = 0.5 * K.k(region) * h[act]
        corr = [b * (th[:, 0] + th[:, 1])]
        if order == 1:
            corr.append(b * (th[:, 1] - th[:, 0]))
        mom[act] += part - np.stack(corr, axis=1)
    return mom


def interface_edge_moments(mesh, edge, grads, values, K, gamma, n_gamma, order):
    """Moments on an edge lying on the interface.

    ``int_F {K grad u . n} q - gamma k_Gamma / h_F int_F [u_h] q`` with the
    result expressed against ``n_F``. ``grads`` holds the two constant
    gradients ``grad u^1``, ``grad u^2`` on the edge, ``values`` the (2, 2)
    endpoint values of ``u^1`` and ``u^2``, and ``n_gamma`` the interface
    normal (region 1 -> 2).
    """
    h = mesh.edge_lengths[edge]
    n_f = mesh.normals[edge]
    s = float(np.sign(n_gamma @ n_f))
    grads = np.asarray(grads, dtype=float)
    mean = (K.omega1 * K.k1 * grads[0] + K.omega2 * K.k2 * grads[1]) @ n_gamma
    jump = np.asarray(values[0], dtype=float) - np.asarray(values[1], dtype=float)
    pen = gamma * K.k_gamma / h
    out = [mean * h - pen * h * 0.5 * (jump[0] + jump[1])]
    if order == 1:
        # int_0^1 (2t - 1) (a (1 - t) + b t) dt = (b - a) / 6
        out.append(-pen * h * (jump[1] - jump[0]) / 6.0)
    return s * np.array(out)


def interior_moments(u_h, K, cfg):
    """Element moments against ``e_x`` and ``e_y`` (order 1)."""
    mesh, cut = u_h.mesh, u_h.cut
    nt = mesh.n_triangles
    mom = np.zeros((nt, 2))
    for region in (1, 2):
        el = np.flatnonzero(cut.elements[region - 1])
        mom[el] += K.k(region) * cut.region_area[region - 1][el, None] * u_h.gradient(region)[el]
    c = cut.cut_ids
    if len(c):
        lam_m = mesh.barycentric(c, cut.M)
        lam_n = mesh.barycentric(c, cut.N)
        j = u_h.nodal(1)[c] - u_h.nodal(2)[c]
        jint = 0.5 * cut.gamma_length * (np.einsum("mj,mj->m", lam_m, j) + np.einsum("mj,mj->m", lam_n, j))
        mom[c] -= 2.0 * K.k_gamma * jint[:, None] * cut.gamma_normal
    for region in (1, 2):
        g = u_h.gradient(region)
        f_ids = np.flatnonzero(cut.ghost_edges[region - 1])
        tm, tp = mesh.edge_elements[f_ids].T
        n = mesh.normals[f_ids]
        jn = np.einsum("md,md->m", g[tm] - g[tp], n)
        coef = cfg.gamma_g * K.k(region) * mesh.edge_lengths[f_ids] ** 2 * jn
        np.add.at(mom, tm, coef[:, None] * n)
        np.add.at(mom, tp, -coef[:, None] * n)
    return mom


def recover_flux(u_h, theta, K=None, cfg=None, order=None):
    """Locally conservative RT flux from ``u_h`` and its multipliers ``theta``."""
    K = K or u_h.forms.K
    cfg = cfg or u_h.forms.cfg
    order = cfg.rt_order if order is None else order
    if order not in (0, 1):
        raise ValueError(f"RT order must be 0 or 1, got {order}")
    if theta.space.dofs is not u_h.dofs:
        raise ValueError("multiplier field was built for a different discretisation")
    em = edge_moments(u_h, theta, K, order)
    im = interior_moments(u_h, K, cfg) if order == 1 else None
    sigma = FluxField(u_h.mesh, order, em, im)
    sigma.load = u_h.forms.load
    sigma.dofs = u_h.dofs
    return sigma


def source_projection(mesh, dofs, load, order):
    """Coefficients (nt, 3) of ``pi^m_T f`` in the barycentric basis.

    Built from the element load moments ``int_T f lambda_j`` (both regions
    summed), so it matches the discrete load exactly.
    """
    b = np.zeros((mesh.n_triangles, 3))
    for region in (1, 2):
        idx = dofs.d_index[region - 1]
        b += np.where(idx >= 0, load[np.maximum(idx, 0)], 0.0)
    area = mesh.areas
    if order == 0:
        return np.repeat((b.sum(axis=1) / area)[:, None], 3, axis=1)
    # P1 mass matrix is |T|/12 (I + 11^T); its inverse is 12/|T| (I - 11^T/4)
    return (4.0 * b - b.sum(axis=1, keepdims=True)) * (3.0 / area)[:, None]


def divergence_residual(sigma, f=None, cut=None, degree=7):
    """Per-element ``||div sigma + pi^m_T f||_T``.

    With ``f`` omitted the projection uses the load stored by
    :func:`recover_flux`; otherwise the load is re-assembled with ``degree``.
    """
    mesh = sigma.mesh
    dofs = sigma.dofs
    load = sigma.load if f is None else assemble_load(mesh, cut or dofs.cut, f, degree, dofs)
    pf = source_projection(mesh, dofs, load, sigma.order)
    coords = mesh.vertices[mesh.triangles]
    pts, w = map_triangle(coords, 2)
    elems = np.arange(mesh.n_triangles)
    lam = mesh.barycentric(elems, pts)
    r = sigma.divergence(elems, pts) + np.einsum("mqj,mj->mq", lam, pf)
    return np.sqrt(np.sum(w * r * r, axis=1))


def source_norm(mesh, f, degree=7):
    """Per-element ``||f||_T`` by quadrature on the background elements."""
    pts, w = map_triangle(mesh.vertices[mesh.triangles], degree)
    v = f(pts[..., 0], pts[..., 1])
    return np.sqrt(np.sum(w * v * v, axis=1))

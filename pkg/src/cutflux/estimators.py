"""A posteriori error estimators and the conforming interpolant."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flux import source_projection
from .mesh import TriangleMesh
from .primal import assemble_load


def _per_element(nt, elem, values):
    return np.bincount(elem, weights=values, minlength=nt)


def compute_eta(sigma, u_h, K, cut=None):
    """Flux estimator: per-element ``eta_T`` and global ``eta``.

    ``eta_T^2 = sum_i int_{T cap Omega^i} |sigma - k_i grad u^i|^2 / k_i``,
    integrated exactly (the integrand has degree ``2 (m + 1)``).
    """
    cut = cut or u_h.cut
    nt = u_h.mesh.n_triangles
    eta2 = np.zeros(nt)
    degree = 2 * (sigma.order + 1)
    for region in (1, 2):
        k = K.k(region)
        elem, pts, w = cut.region_quadrature(region, degree)
        if not len(elem):
            continue
        tau = sigma.evaluate(elem, pts) - k * u_h.gradient(region)[elem][:, None, :]
        eta2 += _per_element(nt, elem, np.sum(w * np.sum(tau * tau, axis=-1), axis=1) / k)
    eta_t = np.sqrt(eta2)
    return eta_t, float(np.sqrt(eta2.sum()))


def interface_jump_sq(u_h, cut=None):
    """``||[u_h]||^2`` on each interface segment (aligned with ``cut_ids``)."""
    cut = cut or u_h.cut
    c = cut.cut_ids
    if not len(c):
        return np.zeros(0)
    mesh = u_h.mesh
    j = u_h.nodal(1)[c] - u_h.nodal(2)[c]
    jm = np.einsum("mj,mj->m", mesh.barycentric(c, cut.M), j)
    jn = np.einsum("mj,mj->m", mesh.barycentric(c, cut.N), j)
    return cut.gamma_length / 3.0 * (jm * jm + jm * jn + jn * jn)


def compute_eta_gamma(u_h, K, cut=None):
    """Interface estimator: per-element ``eta~_T`` (zero off the interface) and ``eta_Gamma``."""
    cut = cut or u_h.cut
    mesh = u_h.mesh
    c = cut.cut_ids
    out = np.zeros(mesh.n_triangles)
    if len(c):
        scale = mesh.diameters[c] * K.k_gamma / (cut.gamma_length * cut.hmin)
        out[c] = np.sqrt(scale * interface_jump_sq(u_h, cut))
    return out, float(np.sqrt(np.sum(out**2)))


def compute_data_oscillation(f, mesh, cut, K, order, dofs, degree=7):
    """Data oscillation ``eps(Omega)`` and the per-element terms ``h_T^2/delta_T ||f - pi f||_T^2``.

    ``f`` is one callable or a pair of per-region callables; the projection
    is taken over the whole element.
    """
    fs = f if isinstance(f, (tuple, list)) else (f, f)
    load = assemble_load(mesh, cut, fs, degree, dofs)
    pf = source_projection(mesh, dofs, load, order)
    nt = mesh.n_triangles
    err2 = np.zeros(nt)
    for region in (1, 2):
        elem, pts, w = cut.region_quadrature(region, degree)
        if not len(elem):
            continue
        lam = mesh.barycentric(elem, pts)
        r = fs[region - 1](pts[..., 0], pts[..., 1]) - np.einsum("mqj,mj->mq", lam, pf[elem])
        err2 += _per_element(nt, elem, np.sum(w * r * r, axis=1))
    terms = mesh.diameters**2 / K.delta(cut) * err2
    return float(np.sqrt(terms.sum())), terms


def exact_energy_error(u_h, exact_grad, K, cut=None, degree=7):
    """``|u - u_h|_{1,K,h}`` with ``exact_grad`` a pair of callables ``(x, y) -> (..., 2)``."""
    cut = cut or u_h.cut
    total = 0.0
    for region in (1, 2):
        elem, pts, w = cut.region_quadrature(region, degree)
        if not len(elem):
            continue
        e = exact_grad[region - 1](pts[..., 0], pts[..., 1]) - u_h.gradient(region)[elem][:, None, :]
        total += K.k(region) * float(np.sum(w * np.sum(e * e, axis=-1)))
    return float(np.sqrt(total))


@dataclass
class ConformingInterpolant:
    """Continuous piecewise-linear field on the split mesh.

    Every sub-triangle ``s`` has corners ``coords[s]`` (CCW), nodal values
    ``values[s]``, background element ``parent[s]`` and material ``region[s]``.
    """

    coords: np.ndarray
    values: np.ndarray
    parent: np.ndarray
    region: np.ndarray
    gap_per_element: np.ndarray
    gap: float

    def gradients(self):
        a, b, c = self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]
        e1, e2 = b - a, c - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        dv1 = self.values[:, 1] - self.values[:, 0]
        dv2 = self.values[:, 2] - self.values[:, 0]
        gx = (dv1 * e2[:, 1] - dv2 * e1[:, 1]) / det
        gy = (dv2 * e1[:, 0] - dv1 * e2[:, 0]) / det
        return np.column_stack([gx, gy])

    def as_mesh(self, decimals=12):
        """Merge coincident corners into a :class:`TriangleMesh`; returns ``(mesh, values)``."""
        pts = self.coords.reshape(-1, 2)
        key = np.round(pts, decimals)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        tri = inv.reshape(-1, 3)
        return TriangleMesh(uniq, tri), self.values


def build_conforming_interpolant(u_h, K, cut=None):
    """Conforming interpolant ``I_h u_h`` and the gap ``|I_h u_h - u_h|_{1,K,h}``.

    Uncut elements keep ``u_h``. A cut element ``A1 A2 A3`` (``A1`` alone on
    its side, ``M`` on ``A1A2``, ``N`` on ``A1A3``) is split into ``A1 M N``
    and the quadrilateral ``M A2 A3 N``, cut along ``A3 M`` when
    ``|A2 M| <= |A3 N|`` and along ``A2 N`` otherwise. Original vertices take
    the value of the region that owns them; ``M`` and ``N`` take
    ``{u_h}* = omega2 u^1 + omega1 u^2``.
    """
    cut = cut or u_h.cut
    mesh = u_h.mesh
    nt = mesh.n_triangles
    vreg = cut.vertex_region()
    vals = {r: u_h.nodal(r) for r in (1, 2)}
    own = np.where(vreg[mesh.triangles] == 1, vals[1], vals[2])

    unc = np.setdiff1d(np.arange(nt), cut.cut_ids)
    coords = [mesh.vertices[mesh.triangles[unc]]]
    values = [own[unc]]
    parent = [unc]
    region = [np.asarray(cut.classes[unc], dtype=int)]

    c = cut.cut_ids
    if len(c):
        A = cut.cut_vertices()
        X = mesh.vertices[A]
        r1 = cut.lone_region
        r2 = 3 - r1

        def at(points, region_arr):
            lam = mesh.barycentric(c, points)
            v = np.where((region_arr == 1)[:, None], vals[1][c], vals[2][c])
            return np.einsum("mj,mj->m", lam, v)

        def star(points):
            lam = mesh.barycentric(c, points)
            return (K.omega2 * np.einsum("mj,mj->m", lam, vals[1][c])
                    + K.omega1 * np.einsum("mj,mj->m", lam, vals[2][c]))

        vA1 = at(X[:, 0], r1)
        vA2 = at(X[:, 1], r2)
        vA3 = at(X[:, 2], r2)
        vM, vN = star(cut.M), star(cut.N)
        use_a3m = np.linalg.norm(X[:, 1] - cut.M, axis=1) <= np.linalg.norm(X[:, 2] - cut.N, axis=1)
        M, N = cut.M, cut.N
        w = use_a3m[:, None, None]
        coords += [
            np.stack([X[:, 0], M, N], axis=1),
            np.where(w, np.stack([M, X[:, 1], X[:, 2]], axis=1), np.stack([M, X[:, 1], N], axis=1)),
            np.where(w, np.stack([M, X[:, 2], N], axis=1), np.stack([N, X[:, 1], X[:, 2]], axis=1)),
        ]
        u = use_a3m[:, None]
        values += [
            np.column_stack([vA1, vM, vN]),
            np.where(u, np.column_stack([vM, vA2, vA3]), np.column_stack([vM, vA2, vN])),
            np.where(u, np.column_stack([vM, vA3, vN]), np.column_stack([vN, vA2, vA3])),
        ]
        parent += [c, c, c]
        region += [r1, r2, r2]

    coords = np.concatenate(coords)
    values = np.concatenate(values)
    parent = np.concatenate(parent)
    region = np.concatenate(region)
    interp = ConformingInterpolant(coords, values, parent, region, np.zeros(nt), 0.0)
    g = interp.gradients()
    gu = np.where((region == 1)[:, None], u_h.gradient(1)[parent], u_h.gradient(2)[parent])
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    k = np.where(region == 1, K.k1, K.k2)
    contrib = k * area * np.sum((g - gu) ** 2, axis=1)
    interp.gap_per_element = np.sqrt(_per_element(nt, parent, contrib))
    interp.gap = float(np.sqrt(contrib.sum()))
    return interp


@dataclass
class EstimatorReport:
    eta_t: np.ndarray
    eta_gamma_t: np.ndarray
    osc_t: np.ndarray
    eta: float
    eta_gamma: float
    eps: float
    error: Optional[float] = None
    gap: Optional[float] = None
    gap_per_element: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def effectivity(self):
        if not self.error:
            return float("nan")
        return (self.eta + self.eta_gamma) / self.error

    def write_csv(self, path, cut):
        with open(path, "w") as fh:
            fh.write("element,class,eta_T,eta_gamma_T,osc_T\n")
            for t in range(len(self.eta_t)):
                fh.write(f"{t},{int(cut.classes[t])},{self.eta_t[t]:.10e},"
                         f"{self.eta_gamma_t[t]:.10e},{self.osc_t[t]:.10e}\n")


def estimate(u_h, sigma, f, K=None, exact_grad=None, degree=7):
    """Evaluate the whole estimator family for one discrete solution."""
    K = K or u_h.forms.K
    cut = u_h.cut
    eta_t, eta = compute_eta(sigma, u_h, K, cut)
    eg_t, eta_gamma = compute_eta_gamma(u_h, K, cut)
    eps, osc = compute_data_oscillation(f, u_h.mesh, cut, K, sigma.order, u_h.dofs, degree)
    interp = build_conforming_interpolant(u_h, K, cut)
    error = None if exact_grad is None else exact_energy_error(u_h, exact_grad, K, cut, degree)
    return EstimatorReport(eta_t, eg_t, osc, eta, eta_gamma, eps, error, interp.gap, interp.gap_per_element)

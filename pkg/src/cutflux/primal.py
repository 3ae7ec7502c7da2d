"""Nitsche CutFEM discretisation of the two-material diffusion problem.

All bilinear forms are assembled on the broken space ``D_h`` (elementwise P1
on each active mesh ``T_h^i``); the conforming space ``C_h`` is the image of
the prolongation ``P`` that glues element values across active edges. The
primal matrix is ``P^T A P``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .mesh import BOUNDARY
from .quadrature import line_rule


class PenaltyTooSmallError(RuntimeError):
    """The assembled matrix is not positive definite on the free dofs."""


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiffusionData:
    """Piecewise constant diffusion ``k1`` on region 1 and ``k2`` on region 2."""

    k1: float
    k2: float

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("diffusion coefficients must be positive")

    @property
    def omega1(self):
        return self.k2 / (self.k1 + self.k2)

    @property
    def omega2(self):
        return self.k1 / (self.k1 + self.k2)

    @property
    def k_gamma(self):
        return self.k1 * self.k2 / (self.k1 + self.k2)

    def k(self, region):
        return self.k1 if region == 1 else self.k2

    def delta(self, cut):
        """Per-element ``delta_T``: ``k_i`` away from the interface, ``k_gamma`` on cut cells."""
        d = np.where(cut.classes == 1, self.k1, self.k2).astype(float)
        d[cut.cut_ids] = self.k_gamma
        return d


@dataclass
class SolverConfig:
    gamma: float = 10.0
    gamma_g: float = 0.1
    rtol: float = 1e-12
    rt_order: int = 1
    stiffness_degree: int = 2
    source_degree: int = 7
    boundary: str = "interpolated-exact"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.gamma_g < 0:
            raise ValueError("gamma_g must be non-negative")
        if self.rt_order not in (0, 1):
            raise ValueError("rt_order must be 0 or 1")
        if self.boundary not in ("homogeneous", "interpolated-exact"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")


def per_region(data):
    """Normalise ``f`` or ``(f1, f2)`` into a pair of callables (or ``None``)."""
    if data is None:
        return None
    if isinstance(data, (tuple, list)):
        if len(data) != 2:
            raise ValueError("expected a pair of per-region callables")
        return tuple(data)
    return (data, data)


class DofHandler:
    """Numbering of the broken space ``D_h`` and the conforming space ``C_h``.

    ``d_index[i]`` is an (nt, 3) array of D-dof ids for region ``i + 1``
    (-1 on elements outside ``T_h^i``). C-dofs are the classes of D-dofs
    glued across active interior edges; a vertex where ``Omega_h^i`` is
    pinched therefore carries one C-dof per connected side.
    """

    def __init__(self, mesh, cut):
        self.mesh = mesh
        self.cut = cut
        nt = mesh.n_triangles
        self.d_index = []
        offset = 0
        for region in (1, 2):
            el = np.flatnonzero(cut.elements[region - 1])
            idx = np.full((nt, 3), -1, dtype=np.int64)
            idx[el] = offset + np.arange(3 * len(el)).reshape(-1, 3)
            self.d_index.append(idx)
            offset += 3 * len(el)
        self.n_d = offset
        self.d_region = np.empty(self.n_d, dtype=np.int64)
        self.d_elem = np.empty(self.n_d, dtype=np.int64)
        self.d_local = np.empty(self.n_d, dtype=np.int64)
        for region in (1, 2):
            idx = self.d_index[region - 1]
            el, loc = np.nonzero(idx >= 0)
            self.d_region[idx[el, loc]] = region
            self.d_elem[idx[el, loc]] = el
            self.d_local[idx[el, loc]] = loc
        self.d_vertex = mesh.triangles[self.d_elem, self.d_local]

        rows, cols = [], []
        for region in (1, 2):
            idx = self.d_index[region - 1]
            act = cut.active_edges[region - 1] & ~mesh.boundary_edges
            f = np.flatnonzero(act)
            tm, tp = mesh.edge_elements[f].T
            for end in (0, 1):
                v = mesh.edges[f, end]
                lm = np.argmax(mesh.triangles[tm] == v[:, None], axis=1)
                lp = np.argmax(mesh.triangles[tp] == v[:, None], axis=1)
                rows.append(idx[tm, lm])
                cols.append(idx[tp, lp])
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_d, self.n_d))
        self.n_c, self.c_of_d = connected_components(graph, directed=False)
        self.c_vertex = np.empty(self.n_c, dtype=np.int64)
        self.c_vertex[self.c_of_d] = self.d_vertex
        self.c_region = np.empty(self.n_c, dtype=np.int64)
        self.c_region[self.c_of_d] = self.d_region
        # Dirichlet dofs sit on a boundary edge of their own region; a copy that
        # meets the boundary only at a vertex is a fictitious extension and stays free
        self.dirichlet = np.zeros(self.n_c, dtype=bool)
        for region in (1, 2):
            idx = self.d_index[region - 1]
            f = np.flatnonzero(cut.active_edges[region - 1] & mesh.boundary_edges)
            tm = mesh.edge_elements[f, 0]
            for end in (0, 1):
                loc = np.argmax(mesh.triangles[tm] == mesh.edges[f, end][:, None], axis=1)
                self.dirichlet[self.c_of_d[idx[tm, loc]]] = True
        self.P = sp.csr_matrix((np.ones(self.n_d), (np.arange(self.n_d), self.c_of_d)),
                               shape=(self.n_d, self.n_c))

    @property
    def free(self):
        return np.flatnonzero(~self.dirichlet)


def _coo(rows, cols, vals, n):
    rows = np.concatenate([r.ravel() for r in rows]) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate([c.ravel() for c in cols]) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate([v.ravel() for v in vals]) if vals else np.zeros(0)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _edge_lambda_integrals(mesh, elems, edge_ids, interval):
    """``int_{sub-edge} lambda_j ds`` for the three local basis functions of ``elems``."""
    t0, t1 = interval[:, 0], interval[:, 1]
    h = mesh.edge_lengths[edge_ids]
    e0 = mesh.edges[edge_ids, 0]
    e1 = mesh.edges[edge_ids, 1]
    tri = mesh.triangles[elems]
    at0 = (tri == e0[:, None]).astype(float)
    at1 = (tri == e1[:, None]).astype(float)
    i0 = (t1 - t0) - 0.5 * (t1**2 - t0**2)
    i1 = 0.5 * (t1**2 - t0**2)
    return h[:, None] * (at0 * i0[:, None] + at1 * i1[:, None])


@dataclass
class Forms:
    """Sparse D_h-level operators of the discretisation.

    ``a_h = volume + gamma_g * ghost + gamma * interface_jump + interface_flux``;
    ``flux_jump`` holds the one-sided part of ``d_h`` so that
    ``d_h(u, v) = v . (flux_jump + flux_jump^T) u``.
    """

    dofs: DofHandler
    K: DiffusionData
    cfg: SolverConfig
    volume: sp.csr_matrix
    ghost: sp.csr_matrix
    interface_jump: sp.csr_matrix
    interface_flux: sp.csr_matrix
    flux_jump: sp.csr_matrix
    load: np.ndarray

    @property
    def a(self):
        return (self.volume + self.cfg.gamma_g * self.ghost
                + self.cfg.gamma * self.interface_jump + self.interface_flux)

    @property
    def d(self):
        return self.flux_jump + self.flux_jump.T

    @property
    def a_tilde(self):
        return self.a - self.d

    def norm_h_matrix(self):
        return self.volume + self.ghost + self.interface_jump


def assemble_forms(mesh, cut, K, f, cfg, dofs=None):
    """Assemble every D_h operator and the load vector ``int f^i v^i``."""
    dofs = dofs or DofHandler(mesh, cut)
    n = dofs.n_d
    G = mesh.bary_grads

    rows, cols, vals = [], [], []
    for region in (1, 2):
        idx = dofs.d_index[region - 1]
        el = np.flatnonzero(cut.elements[region - 1])
        loc = K.k(region) * cut.region_area[region - 1][el][:, None, None] * np.einsum(
            "mid,mjd->mij", G[el], G[el])
        d = idx[el]
        rows.append(np.broadcast_to(d[:, :, None], loc.shape))
        cols.append(np.broadcast_to(d[:, None, :], loc.shape))
        vals.append(loc)
    volume = _coo(rows, cols, vals, n)

    rows, cols, vals = [], [], []
    for region in (1, 2):
        idx = dofs.d_index[region - 1]
        f_ids = np.flatnonzero(cut.ghost_edges[region - 1])
        tm, tp = mesh.edge_elements[f_ids].T
        nF = mesh.normals[f_ids]
        j = np.concatenate([np.einsum("mid,md->mi", G[tm], nF), -np.einsum("mid,md->mi", G[tp], nF)], axis=1)
        d = np.concatenate([idx[tm], idx[tp]], axis=1)
        coef = K.k(region) * mesh.edge_lengths[f_ids] ** 2
        loc = coef[:, None, None] * j[:, :, None] * j[:, None, :]
        rows.append(np.broadcast_to(d[:, :, None], loc.shape))
        cols.append(np.broadcast_to(d[:, None, :], loc.shape))
        vals.append(loc)
    ghost = _coo(rows, cols, vals, n)

    c = cut.cut_ids
    if len(c):
        t, w = line_rule(2)
        pts = cut.M[:, None, :] + t[None, :, None] * (cut.N - cut.M)[:, None, :]
        wts = cut.gamma_length[:, None] * w[None, :]
        lam = mesh.barycentric(c, pts)
        s = np.concatenate([lam, -lam], axis=2)
        d = np.concatenate([dofs.d_index[0][c], dofs.d_index[1][c]], axis=1)
        jump = np.einsum("mq,mqi,mqj->mij", wts, s, s) * (K.k_gamma / mesh.diameters[c])[:, None, None]
        gn = np.einsum("mid,md->mi", G[c], cut.gamma_normal)
        q = np.concatenate([K.omega1 * K.k1 * gn, K.omega2 * K.k2 * gn], axis=1)
        J1 = np.einsum("mq,mqi->mi", wts, s)
        flux = -(J1[:, :, None] * q[:, None, :] + q[:, :, None] * J1[:, None, :])
        rr = np.broadcast_to(d[:, :, None], jump.shape)
        cc = np.broadcast_to(d[:, None, :], jump.shape)
        interface_jump = _coo([rr], [cc], [jump], n)
        interface_flux = _coo([rr], [cc], [flux], n)
    else:
        interface_jump = sp.csr_matrix((n, n))
        interface_flux = sp.csr_matrix((n, n))

    flux_jump = assemble_flux_jump(mesh, cut, K, dofs)
    load = assemble_load(mesh, cut, f, cfg.source_degree, dofs)
    return Forms(dofs, K, cfg, volume, ghost, interface_jump, interface_flux, flux_jump, load)


def assemble_flux_jump(mesh, cut, K, dofs):
    """Matrix of ``sum_F int_{F cap Omega^i} <k_i grad u . n_F> [[v]]`` (rows v, cols u)."""
    G = mesh.bary_grads
    n = dofs.n_d
    rows, cols, vals = [], [], []
    for region in (1, 2):
        idx = dofs.d_index[region - 1]
        iv = cut.edge_interval[region - 1]
        use = cut.active_edges[region - 1] & (iv[:, 1] > iv[:, 0])
        k = K.k(region)
        f_int = np.flatnonzero(use & ~mesh.boundary_edges)
        tm, tp = mesh.edge_elements[f_int].T
        nF = mesh.normals[f_int]
        a = 0.5 * k * np.concatenate([np.einsum("mid,md->mi", G[tm], nF),
                                      np.einsum("mid,md->mi", G[tp], nF)], axis=1)
        cv = np.concatenate([_edge_lambda_integrals(mesh, tm, f_int, iv[f_int]),
                             -_edge_lambda_integrals(mesh, tp, f_int, iv[f_int])], axis=1)
        d = np.concatenate([idx[tm], idx[tp]], axis=1)
        loc = cv[:, :, None] * a[:, None, :]
        rows.append(np.broadcast_to(d[:, :, None], loc.shape))
        cols.append(np.broadcast_to(d[:, None, :], loc.shape))
        vals.append(loc)

        f_bd = np.flatnonzero(use & mesh.boundary_edges)
        tm = mesh.edge_elements[f_bd, 0]
        a = k * np.einsum("mid,md->mi", G[tm], mesh.normals[f_bd])
        cv = _edge_lambda_integrals(mesh, tm, f_bd, iv[f_bd])
        d = idx[tm]
        loc = cv[:, :, None] * a[:, None, :]
        rows.append(np.broadcast_to(d[:, :, None], loc.shape))
        cols.append(np.broadcast_to(d[:, None, :], loc.shape))
        vals.append(loc)
    return _coo(rows, cols, vals, n)


def assemble_load(mesh, cut, f, degree, dofs):
    load = np.zeros(dofs.n_d)
    fs = per_region(f)
    if fs is None:
        return load
    for region in (1, 2):
        elem, pts, w = cut.region_quadrature(region, degree)
        if len(elem) == 0:
            continue
        vals = np.asarray(fs[region - 1](pts[..., 0], pts[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, w.shape)
        lam = mesh.barycentric(elem, pts)
        contrib = np.einsum("mq,mq,mqj->mj", w, vals, lam)
        np.add.at(load, dofs.d_index[region - 1][elem].ravel(), contrib.ravel())
    return load


@dataclass
class SparseLinearSystem:
    """Primal system on the free C-dofs after symmetric Dirichlet elimination."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    forms: Forms
    full_matrix: sp.csr_matrix
    full_rhs: np.ndarray
    dirichlet_values: np.ndarray
    solution: Optional[np.ndarray] = None

    @property
    def dofs(self):
        return self.forms.dofs


def dirichlet_values(dofs, g, mode):
    vals = np.zeros(dofs.n_c)
    gs = per_region(g)
    if mode == "homogeneous" or gs is None:
        return vals
    bd = np.flatnonzero(dofs.dirichlet)
    xy = dofs.mesh.vertices[dofs.c_vertex[bd]]
    for region in (1, 2):
        sel = dofs.c_region[bd] == region
        if np.any(sel):
            vals[bd[sel]] = gs[region - 1](xy[sel, 0], xy[sel, 1])
    return vals


def assemble_primal(mesh, cut, K, f, cfg, g=None):
    """Assemble ``a_h(u, v) = l_h(v)`` on ``C_h`` with Dirichlet data ``g``.

    ``g`` (callable or per-region pair) is interpolated at boundary vertices
    when ``cfg.boundary == "interpolated-exact"``.
    """
    forms = assemble_forms(mesh, cut, K, f, cfg)
    dofs = forms.dofs
    P = dofs.P
    A = (P.T @ forms.a @ P).tocsr()
    b = P.T @ forms.load
    gvals = dirichlet_values(dofs, g, cfg.boundary)
    free = dofs.free
    Aff = A[free][:, free].tocsr()
    rhs = b[free] - A[free] @ gvals
    return SparseLinearSystem(Aff, rhs, forms, A, b, gvals)


def _factorize(A):
    lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    if np.array_equal(lu.perm_r, lu.perm_c):
        piv = lu.U.diagonal()
        if np.any(piv <= 0):
            raise PenaltyTooSmallError(
                "primal matrix is not positive definite; increase the Nitsche penalty gamma")
    return lu


def solve_primal(system):
    """Sparse direct solve with iterative refinement; returns a :class:`PrimalSolution`."""
    A, b = system.matrix, system.rhs
    dofs = system.dofs
    x = np.zeros(len(b))
    if len(b):
        try:
            lu = _factorize(A)
        except RuntimeError as exc:
            if isinstance(exc, PenaltyTooSmallError):
                raise
            raise SingularSystemError(str(exc)) from exc
        bnorm = np.linalg.norm(b)
        if bnorm > 0:
            x = lu.solve(b)
            for _ in range(5):
                r = b - A @ x
                if np.linalg.norm(r) <= system.forms.cfg.rtol * bnorm:
                    break
                x += lu.solve(r)
            if not np.all(np.isfinite(x)):
                raise SingularSystemError("non-finite solution")
    coeffs = system.dirichlet_values.copy()
    coeffs[dofs.free] = x
    system.solution = coeffs
    return PrimalSolution(system.forms, coeffs)


class PrimalSolution:
    """Discrete solution ``u_h = (u_h^1, u_h^2)`` with per-element helpers."""

    def __init__(self, forms, coeffs):
        self.forms = forms
        self.dofs = forms.dofs
        self.mesh = self.dofs.mesh
        self.cut = self.dofs.cut
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.d_values = self.dofs.P @ self.coeffs

    def nodal(self, region):
        """(nt, 3) element vertex values of ``u_h^region`` (NaN outside ``T_h^i``)."""
        idx = self.dofs.d_index[region - 1]
        return np.where(idx >= 0, self.d_values[np.maximum(idx, 0)], np.nan)

    def gradient(self, region):
        """(nt, 2) constant gradient of ``u_h^region`` per element (NaN outside)."""
        return np.einsum("mi,mid->md", self.nodal(region), self.mesh.bary_grads)

    def evaluate(self, region, elems, points):
        lam = self.mesh.barycentric(elems, points)
        vals = self.nodal(region)[elems]
        if lam.ndim == 3:
            return np.einsum("mqj,mj->mq", lam, vals)
        return np.einsum("mj,mj->m", lam, vals)

    def vertex_values(self, region):
        """Per-vertex values of ``u_h^region`` (NaN where undefined)."""
        out = np.full(self.mesh.n_vertices, np.nan)
        sel = self.dofs.c_region == region
        out[self.dofs.c_vertex[sel]] = self.coeffs[sel]
        return out

    @property
    def n_dofs(self):
        return self.dofs.n_c


def energy_seminorm(v, K, cut, degree=7):
    """Broken energy seminorm ``(sum_i sum_T int_{T cap Omega^i} k_i |grad v^i|^2)^(1/2)``.

    ``v`` is a :class:`PrimalSolution`, or a pair of per-region gradients,
    each either an (nt, 2) array of elementwise constants or a callable
    ``grad(x, y) -> (..., 2)``.
    """
    if isinstance(v, PrimalSolution):
        grads = (v.gradient(1), v.gradient(2))
    else:
        grads = per_region(v)
    total = 0.0
    for region in (1, 2):
        gr = grads[region - 1]
        k = K.k(region)
        if callable(gr):
            elem, pts, w = cut.region_quadrature(region, degree)
            if len(elem):
                gv = gr(pts[..., 0], pts[..., 1])
                total += k * float(np.sum(w * np.sum(gv * gv, axis=-1)))
        else:
            gr = np.asarray(gr, dtype=float)
            area = cut.region_area[region - 1]
            sel = area > 0
            total += k * float(np.sum(area[sel] * np.sum(gr[sel] ** 2, axis=1)))
    return float(np.sqrt(total))


def discrete_norm_h(v_h, forms):
    """``||v_h||_h`` (volume, ghost-jump and interface-jump parts) of a C_h or D_h field."""
    if isinstance(v_h, PrimalSolution):
        vd = v_h.d_values
    else:
        vd = np.asarray(v_h, dtype=float)
        if len(vd) == forms.dofs.n_c:
            vd = forms.dofs.P @ vd
    val = float(vd @ (forms.norm_h_matrix() @ vd))
    return float(np.sqrt(max(val, 0.0)))


def residual_functional(u_h):
    """``l_h(v) - a_h(u_h, v) + d_h(u_h, v)`` for every D_h basis function ``v``.

    The boundary part of ``[[u_h]]`` is measured against the Dirichlet data,
    where it vanishes, so only the one-sided flux term of ``d_h`` survives.
    """
    forms = u_h.forms
    u = u_h.d_values
    return forms.load - forms.a @ u + forms.flux_jump @ u


def residual_scale(u_h):
    """Magnitude of the terms of :func:`residual_functional`, summed without cancellation."""
    forms = u_h.forms
    u = np.abs(u_h.d_values)
    return np.abs(forms.load) + abs(forms.a) @ u + abs(forms.flux_jump) @ u

"""Edge multipliers of the auxiliary mixed formulation.

Multipliers ``mu^i`` are linear on every active edge of region ``i`` and are
stored by their two endpoint values. The coupling form is the nodal
(trapezoidal) pairing

    b_h^i(mu, v) = sum_F (k_i h_F / 2) sum_{N in F} mu|_F(N) [[v]](N),

with ``[[v]] = v^- - v^+`` on interior edges and ``[[v]] = v`` on the
boundary. Multipliers for a given primal solution are computed one vertex
patch at a time.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import BOUNDARY
from .primal import residual_functional, residual_scale


class PatchInconsistencyError(RuntimeError):
    """A vertex-patch system has no solution (assembly or data inconsistency)."""


def _local_index(mesh, elems, verts):
    return np.argmax(mesh.triangles[elems] == verts[:, None], axis=1)


class MultiplierSpace:
    """Numbering of the multiplier dofs and the operators that act on them.

    Attributes
    ----------
    m_index : region -> (ne, 2) dof id of the endpoint values (-1 if inactive).
    jump : (n_M, n_D) sparse map ``v -> [[v]](N)`` for each multiplier dof.
    B : (n_M, n_D) sparse matrix of ``b_h``: ``b_h(mu, v) = mu @ B @ v``.
    constraint : (n_closed, n_M) sparse rows of the vertex constraint
        ``sum_F s_{F,N} h_F mu|_F(N) = 0`` at vertices interior to ``Omega_h^i``.
    m_class : C-dof class (vertex patch) of each multiplier dof.
    """

    def __init__(self, dofs, K):
        self.dofs = dofs
        self.K = K
        mesh, cut = dofs.mesh, dofs.cut
        self.mesh = mesh
        self.m_index = []
        region_l, edge_l, end_l = [], [], []
        offset = 0
        for region in (1, 2):
            act = np.flatnonzero(cut.active_edges[region - 1])
            idx = np.full((mesh.n_edges, 2), -1, dtype=np.int64)
            idx[act] = offset + np.arange(2 * len(act)).reshape(-1, 2)
            self.m_index.append(idx)
            offset += 2 * len(act)
            region_l.append(np.full(2 * len(act), region))
            edge_l.append(np.repeat(act, 2))
            end_l.append(np.tile([0, 1], len(act)))
        self.n_m = offset
        self.m_region = np.concatenate(region_l)
        self.m_edge = np.concatenate(edge_l)
        self.m_end = np.concatenate(end_l)
        self.m_vertex = mesh.edges[self.m_edge, self.m_end]

        d_index = np.stack(dofs.d_index)  # (2, nt, 3)
        tm = mesh.edge_elements[self.m_edge, 0]
        tp = mesh.edge_elements[self.m_edge, 1]
        r = self.m_region - 1
        dm = d_index[r, tm, _local_index(mesh, tm, self.m_vertex)]
        interior = tp != BOUNDARY
        tps = np.where(interior, tp, tm)
        dp = d_index[r, tps, _local_index(mesh, tps, self.m_vertex)]
        rows = np.concatenate([np.arange(self.n_m), np.flatnonzero(interior)])
        cols = np.concatenate([dm, dp[interior]])
        vals = np.concatenate([np.ones(self.n_m), -np.ones(int(interior.sum()))])
        self.jump = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_m, dofs.n_d))
        k = np.where(self.m_region == 1, K.k1, K.k2)
        self.weight = 0.5 * k * mesh.edge_lengths[self.m_edge]
        self.B = sp.diags(self.weight) @ self.jump
        self.m_class = dofs.c_of_d[dm]

        nelem = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)
        class_size = np.bincount(dofs.c_of_d, minlength=dofs.n_c)
        closed = (~mesh.boundary_vertices[dofs.c_vertex]) & (class_size == nelem[dofs.c_vertex])
        self.closed_class = closed
        other = mesh.edges[self.m_edge, 1 - self.m_end]
        t = mesh.vertices[other] - mesh.vertices[self.m_vertex]
        cw = np.column_stack([t[:, 1], -t[:, 0]])
        self.sign = np.where(np.einsum("ij,ij->i", cw, mesh.normals[self.m_edge]) > 0, 1.0, -1.0)
        sel = np.flatnonzero(closed[self.m_class])
        row_of_class = np.full(dofs.n_c, -1)
        closed_ids = np.flatnonzero(closed)
        row_of_class[closed_ids] = np.arange(len(closed_ids))
        self.constraint = sp.csr_matrix(
            (self.sign[sel] * mesh.edge_lengths[self.m_edge[sel]], (row_of_class[self.m_class[sel]], sel)),
            shape=(len(closed_ids), self.n_m))

    def gram(self):
        """Gram matrix of ``||mu||_{M_h}^2 = sum k_i h_F ||mu^i||_F^2``."""
        return self._edge_mass(self.weight * 2.0)

    def jump_gram(self):
        """Gram matrix (on D_h) of ``sum k_i / h_F ||[[v]]||_F^2``."""
        h = self.mesh.edge_lengths[self.m_edge]
        W = self._edge_mass(self.weight * 2.0 / h**2)
        return (self.jump.T @ W @ self.jump).tocsr()

    def _edge_mass(self, scale):
        # endpoint dofs of one edge are consecutive: (2j, 2j + 1)
        n = self.n_m
        h = self.mesh.edge_lengths[self.m_edge]
        diag = scale * h / 3.0
        off = np.zeros(max(n - 1, 0))
        off[0::2] = (scale * h / 6.0)[0::2]
        return sp.diags([off, diag, off], [-1, 0, 1], shape=(n, n)).tocsr() if n else sp.csr_matrix((0, 0))


@dataclass
class MultiplierField:
    space: MultiplierSpace
    values: np.ndarray

    def edge_values(self, region):
        """(ne, 2) endpoint values on each edge (NaN where region is inactive)."""
        idx = self.space.m_index[region - 1]
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)], np.nan)

    def constraint_residual(self):
        c = self.space.constraint
        if c.shape[0] == 0:
            return 0.0
        scale = np.abs(c) @ np.abs(self.values)
        return float(np.max(np.abs(c @ self.values) / np.maximum(scale, 1e-300), initial=0.0))

    def write_csv(self, path):
        s = self.space
        with open(path, "w") as fh:
            fh.write("region,edge,value_at_v0,value_at_v1\n")
            for region in (1, 2):
                ev = self.edge_values(region)
                for e in np.flatnonzero(s.m_index[region - 1][:, 0] >= 0):
                    fh.write(f"{region},{e},{ev[e, 0]:.16e},{ev[e, 1]:.16e}\n")


def eval_b_h(theta, v, space):
    """``b_h(theta, v)`` for a multiplier vector and a D_h vector."""
    theta = theta.values if isinstance(theta, MultiplierField) else np.asarray(theta)
    return float(theta @ (space.B @ np.asarray(v)))


def eval_d_h(u, v, forms):
    """Symmetric ``d_h(u, v)`` on D_h (boundary jumps taken as the trace)."""
    return float(np.asarray(v) @ (forms.d @ np.asarray(u)))


def compute_multipliers_local(u_h, space=None, tol=1e-9):
    """Vertex-patch computation of the multipliers for the primal solution ``u_h``.

    For every C-dof class (vertex ``N``, region ``i``) the unknowns are the
    values ``theta^i|_F(N)`` on the active edges at ``N``; there is one
    equation per element piece ``lambda_N^T`` and, at vertices interior to
    ``Omega_h^i``, the vertex constraint row. Each system is solved in the
    least-squares sense and must be consistent.
    """
    dofs = u_h.dofs
    space = space or MultiplierSpace(dofs, u_h.forms.K)
    rhs = residual_functional(u_h)
    scale = residual_scale(u_h)

    Bt = space.B.T.tocoo()
    d_class = dofs.c_of_d
    n_c = dofs.n_c
    d_order = np.argsort(d_class, kind="stable")
    d_count = np.bincount(d_class, minlength=n_c)
    d_start = np.concatenate([[0], np.cumsum(d_count)[:-1]])
    d_pos = np.empty(dofs.n_d, dtype=np.int64)
    d_pos[d_order] = np.arange(dofs.n_d) - np.repeat(d_start, d_count)

    m_order = np.argsort(space.m_class, kind="stable")
    m_count = np.bincount(space.m_class, minlength=n_c)
    m_start = np.concatenate([[0], np.cumsum(m_count)[:-1]])
    m_pos = np.empty(space.n_m, dtype=np.int64)
    m_pos[m_order] = np.arange(space.n_m) - np.repeat(m_start, m_count)

    closed = space.closed_class
    n_rows = d_count + closed
    theta = np.zeros(space.n_m)
    worst = 0.0
    shapes = np.stack([n_rows, m_count, closed], axis=1)
    uniq, group = np.unique(shapes, axis=0, return_inverse=True)
    group = group.ravel()
    entry_class = d_class[Bt.row]
    for g, (nr, nc, is_closed) in enumerate(uniq):
        classes = np.flatnonzero(group == g)
        if nc == 0:
            continue
        slot = np.full(n_c, -1)
        slot[classes] = np.arange(len(classes))
        A = np.zeros((len(classes), nr, nc))
        b = np.zeros((len(classes), nr))
        sc = np.zeros(len(classes))
        sel = slot[entry_class] >= 0
        A[slot[entry_class[sel]], d_pos[Bt.row[sel]], m_pos[Bt.col[sel]]] = Bt.data[sel]
        dsel = slot[d_class] >= 0
        b[slot[d_class[dsel]], d_pos[dsel]] = rhs[dsel]
        np.maximum.at(sc, slot[d_class[dsel]], scale[dsel])
        if is_closed:
            msel = np.flatnonzero(slot[space.m_class] >= 0)
            A[slot[space.m_class[msel]], nr - 1, m_pos[msel]] = (
                space.sign[msel] * space.mesh.edge_lengths[space.m_edge[msel]])
        x = np.einsum("gij,gj->gi", np.linalg.pinv(A, rcond=1e-12), b)
        res = np.abs(np.einsum("gij,gj->gi", A, x) - b).max(axis=1)
        rel = res / np.maximum(sc, 1e-300)
        bad = rel > tol
        if np.any(bad):
            c0 = classes[np.argmax(rel)]
            raise PatchInconsistencyError(
                f"vertex patch {dofs.c_vertex[c0]} (region {dofs.c_region[c0]}) residual "
                f"{rel.max():.3e} exceeds {tol:.1e}")
        worst = max(worst, float(rel.max(initial=0.0)))
        msel = np.flatnonzero(slot[space.m_class] >= 0)
        theta[msel] = x[slot[space.m_class[msel]], m_pos[msel]]
    field = MultiplierField(space, theta)
    field.patch_residual = worst
    return field


def verify_mixed_equivalence(u_h, theta):
    """Residuals of both mixed equations for ``(u_h, theta)``.

    Returns a dict with ``eq1`` (max over D_h basis functions of
    ``|l_h - a~_h(u_h, .) - b_h(theta, .)|`` relative to the term scale),
    ``eq1_abs``, and ``eq2`` (max ``|b_h(mu, u_h - g_h)|`` over the multiplier
    basis, relative to ``max |b_h(mu, u_h)|`` terms, where ``g_h`` is the
    conforming lifting of the Dirichlet data).
    """
    space = theta.space
    r = residual_functional(u_h) - space.B.T @ theta.values
    scale = max(float(residual_scale(u_h).max(initial=0.0)), 1e-300)
    dofs = u_h.dofs
    lifted = dofs.P @ np.where(dofs.dirichlet, 0.0, u_h.coeffs)
    e2 = space.B @ lifted
    s2 = np.abs(space.B) @ np.abs(u_h.d_values)
    return {
        "eq1_abs": float(np.max(np.abs(r), initial=0.0)),
        "eq1": float(np.max(np.abs(r), initial=0.0) / scale),
        "eq2_abs": float(np.max(np.abs(e2), initial=0.0)),
        "eq2": float(np.max(np.abs(e2), initial=0.0) / max(float(s2.max(initial=0.0)), 1e-300)),
    }


def kernel_dimension(space, tol=1e-10):
    """Dimension of ``{v in D_h : b_h(mu, v) = 0 for all mu}`` by dense SVD."""
    B = space.B.toarray()
    if B.size == 0:
        return space.dofs.n_d
    s = np.linalg.svd(B, compute_uv=False)
    rank = int(np.sum(s > tol * s.max()))
    return space.dofs.n_d - rank


MAX_DENSE_DOFS = 3000


def compute_infsup_constant(forms, space=None, return_spectrum=False):
    """Discrete inf-sup constant of ``b_h`` in the ``D_h`` / ``M_h`` norms.

    Square root of the smallest nonzero generalised eigenvalue of
    ``B M_D^{-1} B^T`` against ``M_M`` on the constrained multiplier space.
    """
    dofs = forms.dofs
    if dofs.n_d > MAX_DENSE_DOFS:
        raise ValueError(f"{dofs.n_d} D_h dofs exceed the dense limit {MAX_DENSE_DOFS}")
    space = space or MultiplierSpace(dofs, forms.K)
    MD = (forms.norm_h_matrix() + space.jump_gram()).toarray()
    MD = 0.5 * (MD + MD.T)
    B = space.B.toarray()
    MM = space.gram().toarray()
    C = space.constraint.toarray()
    Z = sla.null_space(C) if C.shape[0] else np.eye(space.n_m)
    BZ = B.T @ Z
    cho = sla.cho_factor(MD)
    S = BZ.T @ sla.cho_solve(cho, BZ)
    S = 0.5 * (S + S.T)
    MMz = Z.T @ MM @ Z
    lam = sla.eigh(S, 0.5 * (MMz + MMz.T), eigvals_only=True)
    nonzero = lam[lam > 1e-10 * lam.max()]
    beta = float(np.sqrt(nonzero.min()))
    if return_spectrum:
        return beta, lam
    return beta

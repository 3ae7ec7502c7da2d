import numpy as np
import pytest

from cutflux.geometry import LevelSet, classify_cells, petal_level_set
from cutflux.mesh import BOUNDARY, TriangleMesh, build_structured_mesh
from cutflux.mixed import (
    MAX_DENSE_DOFS,
    MultiplierField,
    MultiplierSpace,
    compute_infsup_constant,
    compute_multipliers_local,
    eval_b_h,
    eval_d_h,
    kernel_dimension,
    verify_mixed_equivalence,
)
from cutflux.primal import DiffusionData, DofHandler, SolverConfig, assemble_forms, residual_functional
from cutflux.problems import petal_source


def _two_triangle_space(k=1.0):
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]])
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [0, 3, 1]]))
    cut = classify_cells(mesh, LevelSet.from_name("constant:1"))
    return mesh, MultiplierSpace(DofHandler(mesh, cut), DiffusionData(k, k))


def _infsup(n, k1, k2):
    mesh = build_structured_mesh(n, n, (-1.0, 1.0, -1.0, 1.0))
    cut = classify_cells(mesh, petal_level_set())
    K = DiffusionData(k1, k2)
    forms = assemble_forms(mesh, cut, K, petal_source, SolverConfig())
    return compute_infsup_constant(forms, MultiplierSpace(forms.dofs, K))


def test_b_h_single_edge():
    mesh, space = _two_triangle_space()
    F = int(np.flatnonzero(mesh.edge_elements[:, 1] != BOUNDARY)[0])
    assert mesh.edge_lengths[F] == pytest.approx(1.0)
    mu = np.zeros(space.n_m)
    mu[space.m_index[1][F]] = 1.0
    dofs = space.dofs
    tm = mesh.edge_elements[F, 0]
    v = np.zeros(dofs.n_d)
    for vert in mesh.edges[F]:
        loc = int(np.flatnonzero(mesh.triangles[tm] == vert)[0])
        v[dofs.d_index[1][tm, loc]] = 1.0
    assert eval_b_h(mu, v, space) == pytest.approx(1.0, abs=1e-15)
    assert eval_b_h(np.zeros(space.n_m), v, space) == 0.0


def test_b_h_boundary_jump_is_trace():
    mesh, space = _two_triangle_space(k=2.0)
    dofs = space.dofs
    v = np.ones(dofs.n_d)
    mu = np.ones(space.n_m)
    # continuous v = 1: only boundary edges see [[v]] = 1, weight k h / 2 at each end
    bd = mesh.boundary_edges
    expected = np.sum(2.0 * mesh.edge_lengths[bd])
    assert eval_b_h(mu, v, space) == pytest.approx(expected, rel=1e-14)


def test_b_h_vanishes_on_conforming(petal_step8, rng):
    u = petal_step8.u_h
    dofs = u.dofs
    space = petal_step8.theta.space
    for _ in range(50):
        v = dofs.P @ np.where(dofs.dirichlet, 0.0, rng.standard_normal(dofs.n_c))
        mu = rng.standard_normal(space.n_m)
        assert abs(eval_b_h(mu, v, space)) <= 1e-11 * np.abs(mu).sum()


def test_d_h_symmetric_and_vanishes_on_conforming(petal_step8, rng):
    forms = petal_step8.u_h.forms
    dofs = forms.dofs
    for _ in range(10):
        u = rng.standard_normal(dofs.n_d)
        v = rng.standard_normal(dofs.n_d)
        assert eval_d_h(u, v, forms) == pytest.approx(eval_d_h(v, u, forms), rel=1e-13, abs=1e-13)
        uc = dofs.P @ np.where(dofs.dirichlet, 0.0, rng.standard_normal(dofs.n_c))
        vc = dofs.P @ np.where(dofs.dirichlet, 0.0, rng.standard_normal(dofs.n_c))
        assert abs(eval_d_h(uc, vc, forms)) <= 1e-12 * np.abs(forms.d).max() * dofs.n_d


def test_d_h_matches_edge_sum_uncut(rng):
    mesh = build_structured_mesh(3, 3)
    cut = classify_cells(mesh, LevelSet.from_name("constant:1"))
    K = DiffusionData(3.0, 3.0)
    forms = assemble_forms(mesh, cut, K, None, SolverConfig())
    dofs = forms.dofs
    u = rng.standard_normal(dofs.n_d)
    v = rng.standard_normal(dofs.n_d)

    def local(w, t):
        return w[dofs.d_index[1][t]]

    def grad(w, t):
        return mesh.bary_grads[t].T @ local(w, t)

    def at(w, t, vert):
        return local(w, t)[np.flatnonzero(mesh.triangles[t] == vert)[0]]

    def one_sided(a, b):
        total = 0.0
        for F in range(mesh.n_edges):
            tm, tp = mesh.edge_elements[F]
            n = mesh.normals[F]
            h = mesh.edge_lengths[F]
            if tp == BOUNDARY:
                flux = 3.0 * grad(a, tm) @ n
                jumps = [at(b, tm, x) for x in mesh.edges[F]]
            else:
                flux = 1.5 * (grad(a, tm) + grad(a, tp)) @ n
                jumps = [at(b, tm, x) - at(b, tp, x) for x in mesh.edges[F]]
            total += flux * h * 0.5 * sum(jumps)
        return total

    expected = one_sided(u, v) + one_sided(v, u)
    assert eval_d_h(u, v, forms) == pytest.approx(expected, rel=1e-12)


def test_multipliers_zero_for_linear_solution(linear_step16):
    theta = linear_step16.theta
    assert np.abs(theta.values).max() <= 1e-10


def test_patch_compatibility(petal_step8):
    u = petal_step8.u_h
    dofs = u.dofs
    r = dofs.P.T @ residual_functional(u)
    scale = np.abs(u.forms.load).max() + np.abs(u.forms.a @ u.d_values).max()
    assert np.abs(r[dofs.free]).max() <= 1e-11 * scale


def test_mixed_equation_residuals(petal_step8):
    rep = verify_mixed_equivalence(petal_step8.u_h, petal_step8.theta)
    assert rep["eq1"] <= 1e-9
    assert rep["eq2"] <= 1e-11
    assert petal_step8.theta.constraint_residual() <= 1e-10


def test_constraint_rows_are_interior_vertices(petal_step8):
    space = petal_step8.theta.space
    closed = np.flatnonzero(space.closed_class)
    assert space.constraint.shape == (len(closed), space.n_m)
    assert not np.any(space.dofs.mesh.boundary_vertices[space.dofs.c_vertex[closed]])


def test_perturbed_multiplier_detected(petal_step8, rng):
    theta = petal_step8.theta
    space = theta.space
    j = int(rng.integers(space.n_m))
    bad = MultiplierField(space, theta.values.copy())
    bad.values[j] += 1.0
    rep = verify_mixed_equivalence(petal_step8.u_h, bad)
    assert rep["eq1_abs"] >= space.weight[j] * (1 - 1e-8)


def test_recomputation_is_deterministic(petal_step8):
    again = compute_multipliers_local(petal_step8.u_h, petal_step8.theta.space)
    np.testing.assert_array_equal(again.values, petal_step8.theta.values)


def test_kernel_is_conforming_space():
    mesh = build_structured_mesh(4, 4, (-1.0, 1.0, -1.0, 1.0))
    cut = classify_cells(mesh, petal_level_set())
    dofs = DofHandler(mesh, cut)
    space = MultiplierSpace(dofs, DiffusionData(1.0, 100.0))
    assert kernel_dimension(space) == len(dofs.free)
    # a single broken node is detected
    v = dofs.P @ np.where(dofs.dirichlet, 0.0, 1.0)
    v[np.flatnonzero(~dofs.dirichlet[dofs.c_of_d])[0]] += 1.0
    assert np.abs(space.B @ v).max() > 0


def test_multiplier_csv(petal_step8, tmp_path):
    path = tmp_path / "theta.csv"
    petal_step8.theta.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "region,edge,value_at_v0,value_at_v1"
    assert len(lines) == 1 + petal_step8.theta.space.n_m // 2


def test_infsup_positive():
    assert _infsup(4, 1.0, 100.0) > 0.0


def test_infsup_invariant_under_k_scaling():
    a = _infsup(4, 1.0, 100.0)
    b = _infsup(4, 100.0, 10000.0)
    assert abs(a - b) / a < 0.05


def test_infsup_mesh_sequence():
    b4 = _infsup(4, 1.0, 100.0)
    b8 = _infsup(8, 1.0, 100.0)
    assert abs(b4 - b8) / max(b4, b8) < 0.20


def test_infsup_size_guard():
    mesh = build_structured_mesh(40, 40)
    cut = classify_cells(mesh, petal_level_set())
    forms = assemble_forms(mesh, cut, DiffusionData(1.0, 1.0), None, SolverConfig())
    assert forms.dofs.n_d > MAX_DENSE_DOFS
    with pytest.raises(ValueError):
        compute_infsup_constant(forms)

"""Property checks on small meshes, run by ``cutflux verify``."""
from itertools import combinations

import numpy as np

from .adaptive import dorfler_mark, solve_and_estimate
from .geometry import classify_cells
from .mesh import build_structured_mesh
from .mixed import MultiplierSpace, compute_infsup_constant, eval_b_h
from .primal import DiffusionData, SolverConfig, assemble_forms
from .problems import linear_interface_problem, petal_problem, petal_source


def check_exactness(n=8):
    p = linear_interface_problem()
    mesh = build_structured_mesh(n, n)
    step = solve_and_estimate(mesh, p, SolverConfig())
    u = step.u_h
    x = mesh.vertices[u.dofs.c_vertex, 0]
    exact = np.where(u.dofs.c_region == 1, (x - 0.3) / p.K.k1, (x - 0.3) / p.K.k2)
    worst = max(np.abs(u.coeffs - exact).max(), step.report.eta, step.report.eta_gamma,
                np.abs(step.theta.values).max())
    return worst <= 1e-10, f"max of dof error, eta, eta_gamma, |theta| = {worst:.2e}"


def check_conservation(n=8):
    p = petal_problem()
    mesh = build_structured_mesh(n, n)
    worst = 0.0
    for order in (0, 1):
        step = solve_and_estimate(mesh, p, SolverConfig(rt_order=order), order=order)
        worst = max(worst, step.conservation)
    return worst <= 1e-9, f"relative divergence residual {worst:.2e}"


def check_mixed(n=8, samples=50, seed=0):
    p = petal_problem()
    mesh = build_structured_mesh(n, n)
    step = solve_and_estimate(mesh, p, SolverConfig())
    dofs = step.u_h.dofs
    rng = np.random.default_rng(seed)
    space = step.theta.space
    worst = 0.0
    for _ in range(samples):
        v = np.where(dofs.dirichlet, 0.0, rng.standard_normal(dofs.n_c))
        mu = rng.standard_normal(space.n_m)
        worst = max(worst, abs(eval_b_h(mu, dofs.P @ v, space)))
    ok = step.mixed["eq1"] <= 1e-9 and worst <= 1e-11
    return ok, f"eq1 {step.mixed['eq1']:.2e}, max b_h(mu, v) {worst:.2e}"


def check_infsup(n=4):
    mesh = build_structured_mesh(n, n)
    cut = classify_cells(mesh, petal_problem().level_set)
    betas = []
    for k2 in (1.0, 100.0, 1e4):
        K = DiffusionData(1.0, k2)
        forms = assemble_forms(mesh, cut, K, petal_source, SolverConfig())
        betas.append(compute_infsup_constant(forms, MultiplierSpace(forms.dofs, K)))
    ok = min(betas) > 0.01 and max(betas) / min(betas) <= 3.0
    return ok, "beta_h = " + ", ".join(f"{b:.4f}" for b in betas)


def check_dorfler(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        n = int(rng.integers(1, 11))
        est = rng.random(n)
        theta = float(rng.uniform(0.05, 1.0))
        got = dorfler_mark(est, theta)
        need = theta * np.sum(est**2)
        best = next(k for k in range(1, n + 1)
                    if any(np.sum(est[list(s)] ** 2) >= need for s in combinations(range(n), k)))
        if len(got) != best or np.sum(est[got] ** 2) < need:
            return False, f"instance {est} theta {theta}: got {len(got)}, minimum {best}"
    return True, f"{instances} random instances minimal"


CHECKS = {
    "exactness": check_exactness,
    "conservation": check_conservation,
    "mixed": check_mixed,
    "infsup": check_infsup,
    "dorfler": check_dorfler,
}


def run_all(report=print):
    ok = True
    for name, fn in CHECKS.items():
        passed, msg = fn()
        ok &= passed
        report(f"{'PASS' if passed else 'FAIL'} {name}: {msg}")
    return ok

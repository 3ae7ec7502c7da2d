"""
Robustness of the multiplier coupling
=====================================

The hybrid formulation is only useful if b_h satisfies a discrete inf-sup
condition independent of the contrast k_+ / k_-. Here the constant is
computed by a dense generalised eigenproblem on small meshes.
"""
from cutflux import DiffusionData, MultiplierSpace, SolverConfig, build_structured_mesh, classify_cells
from cutflux.mixed import compute_infsup_constant
from cutflux.primal import assemble_forms
from cutflux.problems import petal_problem, petal_source

ls = petal_problem().level_set
print("  n    k+      beta_h")
for n in (4, 8):
    mesh = build_structured_mesh(n, n, (-1.0, 1.0, -1.0, 1.0))
    cut = classify_cells(mesh, ls)
    for k2 in (1.0, 1e2, 1e4, 1e6):
        K = DiffusionData(1.0, k2)
        forms = assemble_forms(mesh, cut, K, petal_source, SolverConfig())
        print(f"{n:3d}  {k2:6.0e}  {compute_infsup_constant(forms, MultiplierSpace(forms.dofs, K)):.4f}")

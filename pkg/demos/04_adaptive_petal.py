"""
Adaptive refinement on the petal benchmark
==========================================

Solve, estimate, mark with Doerfler's bulk criterion, refine, repeat. The
marked set also includes cut elements whose interface term exceeds the median
marked eta_T, so the geometry gets resolved along with the solution. The loop
stops before the next mesh would exceed 20000 unknowns.
"""
import numpy as np

from cutflux import BenchmarkConfig, adaptive_loop, fit_convergence_rate

cfg = BenchmarkConfig(theta=0.2, max_dofs=20000, mesh_n0=16)


def report(it, step):
    r = step.report
    print(f"{it:3d}  N = {step.u_h.n_dofs:6d}  eta = {r.eta:.3e}  eta_Gamma = {r.eta_gamma:.3e}  "
          f"error = {r.error:.3e}")


trace = adaptive_loop(cfg, callback=report)

# P1 with optimal refinement converges like N^{-1/2}
print(f"fitted slopes over the last 8 steps: error {fit_convergence_rate(trace, 'error'):.3f}, "
      f"eta {fit_convergence_rate(trace, 'eta'):.3f}")
eff = trace.column("effectivity")
print(f"effectivity went from {eff[0]:.2f} to {eff[-1]:.2f}")

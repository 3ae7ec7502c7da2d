"""CutFEM workbench for elliptic interface problems with discontinuous diffusion.

Nitsche primal solve with ghost penalty, local edge multipliers, locally
conservative Raviart-Thomas flux recovery, a posteriori estimators and an
adaptive refinement loop.
"""
from .adaptive import (AdaptiveTrace, BenchmarkConfig, adaptive_loop, dorfler_mark,
                       fit_convergence_rate, solve_and_estimate)
from .estimators import (build_conforming_interpolant, compute_data_oscillation, compute_eta,
                         compute_eta_gamma, estimate, exact_energy_error)
from .flux import FluxField, divergence_residual, eval_flux, recover_flux
from .geometry import LevelSet, classify_cells, petal_level_set
from .mesh import TriangleMesh, build_structured_mesh, refine
from .mixed import (MultiplierField, MultiplierSpace, compute_infsup_constant,
                    compute_multipliers_local, verify_mixed_equivalence)
from .primal import DiffusionData, PrimalSolution, SolverConfig, assemble_primal, solve_primal
from .problems import linear_interface_problem, petal_problem

__version__ = "0.1.0"

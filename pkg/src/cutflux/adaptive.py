"""Doerfler marking and the adaptive solve-estimate-mark-refine loop."""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .estimators import estimate
from .flux import divergence_residual, recover_flux, source_norm
from .geometry import classify_cells
from .mesh import build_structured_mesh, refine
from .mixed import compute_multipliers_local, verify_mixed_equivalence
from .primal import DofHandler, SolverConfig, assemble_primal, energy_seminorm, solve_primal
from .problems import problem_from_name

log = logging.getLogger(__name__)


class InvariantError(RuntimeError):
    """A computed field violates a property that holds by construction."""


def dorfler_mark(estimates, theta):
    """Smallest set of elements carrying a fraction ``theta`` of ``sum eta_T^2``.

    Elements are taken by decreasing estimate (ties by lower id) until the
    running sum of squares reaches ``theta`` times the total. Returns the
    selected ids in ascending order.
    """
    est = np.asarray(estimates, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"marking fraction must lie in (0, 1], got {theta}")
    if np.any(est < 0) or not np.all(np.isfinite(est)):
        raise ValueError("estimates must be finite and non-negative")
    order = np.lexsort((np.arange(len(est)), -est))
    csum = np.cumsum(est[order] ** 2)
    if not len(est) or csum[-1] == 0.0:
        return np.zeros(0, dtype=np.int64)
    k = int(np.searchsorted(csum, theta * csum[-1], side="left")) + 1
    return np.sort(order[:min(k, len(est))])


@dataclass
class BenchmarkConfig:
    level_set: str = "petal"
    k_minus: float = 1.0
    k_plus: float = 100.0
    gamma: float = 10.0
    gamma_g: float = 0.1
    rt_order: int = 1
    theta: float = 0.2
    max_dofs: int = 20000
    mesh_n0: int = 16
    max_iter: int = 30
    stiffness_degree: int = 2
    source_degree: int = 7
    mark_with_interface: bool = True
    refine_mode: str = "bisec3"
    conservation_tol: float = 1e-9
    mixed_tol: float = 1e-9
    estimator_tol: float = 1e-12
    out_dir: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.rt_order not in (0, 1):
            raise ValueError("rt_order must be 0 or 1")
        if self.mesh_n0 < 1 or self.max_iter < 1:
            raise ValueError("mesh_n0 and max_iter must be positive")

    def solver_config(self):
        return SolverConfig(gamma=self.gamma, gamma_g=self.gamma_g, rt_order=self.rt_order,
                            stiffness_degree=self.stiffness_degree, source_degree=self.source_degree)


@dataclass
class StepResult:
    """Everything computed on one mesh."""

    mesh: object
    cut: object
    u_h: object
    theta: object
    sigma: object
    report: object
    conservation: float
    mixed: dict
    seconds: float


def solve_and_estimate(mesh, problem, cfg, cut=None, order=None):
    """Primal solve, multipliers, flux, estimators and the built-in checks on one mesh."""
    t0 = time.perf_counter()
    cut = cut or classify_cells(mesh, problem.level_set)
    K = problem.K
    u_h = solve_primal(assemble_primal(mesh, cut, K, problem.f, cfg, problem.g))
    theta = compute_multipliers_local(u_h)
    mixed = verify_mixed_equivalence(u_h, theta)
    sigma = recover_flux(u_h, theta, K, cfg, order)
    fnorm = np.maximum(source_norm(mesh, problem.f[0]), source_norm(mesh, problem.f[1]))
    cons = float(np.max(divergence_residual(sigma) / (1.0 + fnorm)))
    report = estimate(u_h, sigma, problem.f, K, problem.exact_grad, cfg.source_degree)
    return StepResult(mesh, cut, u_h, theta, sigma, report, cons, mixed, time.perf_counter() - t0)


@dataclass
class IterationRecord:
    iter: int
    N: int
    eta: float
    eta_gamma: float
    eps: float
    error: float
    effectivity: float
    elements: int
    cut_elements: int
    seconds: float
    conservation: float = 0.0
    mixed_residual: float = 0.0
    gap: float = 0.0


TRACE_COLUMNS = ["iter", "N", "eta", "eta_gamma", "eps", "error", "effectivity",
                 "elements", "cut_elements", "seconds"]


@dataclass
class AdaptiveTrace:
    records: List[IterationRecord] = field(default_factory=list)
    final: Optional[StepResult] = field(default=None, repr=False)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path, extended=False):
        cols = TRACE_COLUMNS + (["conservation", "mixed_residual", "gap"] if extended else [])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                d = asdict(r)
                fh.write(",".join(repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in cols) + "\n")


def fit_convergence_rate(trace, quantity="error", window=8):
    """Least-squares slope of ``log(quantity)`` against ``log(N)`` over the last ``window`` records.

    ``trace`` is an :class:`AdaptiveTrace` or a pair ``(N, values)``.
    """
    if isinstance(trace, AdaptiveTrace):
        n, q = trace.column("N"), trace.column(quantity)
    else:
        n, q = (np.asarray(a, dtype=float) for a in trace)
    if window < 3 or len(n) < window:
        raise ValueError(f"need at least {max(window, 3)} points, have {len(n)}")
    n, q = n[-window:], q[-window:]
    return float(np.polyfit(np.log(n), np.log(q), 1)[0])


def mark(report, cut, theta, with_interface=True):
    """Doerfler marking on ``eta_T``, optionally adding cut elements with large ``eta~_T``."""
    marked = dorfler_mark(report.eta_t, theta)
    if with_interface and len(marked) and len(cut.cut_ids):
        ref = np.median(report.eta_t[marked])
        extra = cut.cut_ids[report.eta_gamma_t[cut.cut_ids] > ref]
        marked = np.union1d(marked, extra)
    return marked


def adaptive_loop(cfg=None, problem=None, callback=None):
    """Run the adaptive loop and return its :class:`AdaptiveTrace`.

    Stops when the refined mesh would exceed ``cfg.max_dofs`` degrees of
    freedom, when nothing is marked, when ``eta + eta_Gamma`` drops below
    ``cfg.estimator_tol`` times the energy of ``u_h`` (the discrete solution is
    then exact up to rounding), or after ``cfg.max_iter`` iterations.
    ``callback(iteration, step)`` is invoked after every solve.
    """
    cfg = cfg or BenchmarkConfig()
    problem = problem or problem_from_name(cfg.level_set, cfg.k_minus, cfg.k_plus)
    scfg = cfg.solver_config()
    x0, x1, y0, y1 = problem.domain
    mesh = build_structured_mesh(cfg.mesh_n0, cfg.mesh_n0, (x0, x1, y0, y1))
    cut = None
    trace = AdaptiveTrace()
    for it in range(cfg.max_iter):
        try:
            step = solve_and_estimate(mesh, problem, scfg, cut)
        except Exception as exc:
            raise RuntimeError(f"adaptive iteration {it} failed: {exc}") from exc
        if step.conservation > cfg.conservation_tol:
            raise InvariantError(f"iteration {it}: conservation residual {step.conservation:.3e}")
        if step.mixed["eq1"] > cfg.mixed_tol or step.mixed["eq2"] > cfg.mixed_tol:
            raise InvariantError(f"iteration {it}: mixed residual {step.mixed}")
        rep = step.report
        rec = IterationRecord(
            it, step.u_h.n_dofs, rep.eta, rep.eta_gamma, rep.eps,
            float("nan") if rep.error is None else rep.error, rep.effectivity,
            mesh.n_triangles, step.cut.n_cut, step.seconds,
            step.conservation, step.mixed["eq1"], rep.gap)
        trace.records.append(rec)
        trace.final = step
        log.info("iter %d: N=%d eta=%.4e eta_gamma=%.4e error=%.4e (%.2fs)",
                 it, rec.N, rec.eta, rec.eta_gamma, rec.error, rec.seconds)
        if callback is not None:
            callback(it, step)
        if it + 1 >= cfg.max_iter:
            break
        if rep.eta + rep.eta_gamma <= cfg.estimator_tol * energy_seminorm(step.u_h, problem.K, step.cut):
            break
        marked = mark(rep, step.cut, cfg.theta, cfg.mark_with_interface)
        if not len(marked):
            break
        new_mesh = refine(mesh, marked, cfg.refine_mode)
        new_cut = classify_cells(new_mesh, problem.level_set)
        if DofHandler(new_mesh, new_cut).n_c > cfg.max_dofs:
            break
        mesh, cut = new_mesh, new_cut
    return trace

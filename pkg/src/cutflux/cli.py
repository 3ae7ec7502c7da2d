"""Command line interface: ``cutflux adapt | solve | verify``."""
import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .adaptive import adaptive_loop, solve_and_estimate
from .flux import divergence_residual
from .geometry import classify_cells, write_topology_csv
from .mesh import build_structured_mesh
from .problems import problem_from_name
from .verification import run_all


def _onoff(value):
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def _add_overrides(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--theta", type=float, help="Doerfler marking fraction")
    p.add_argument("--max-dofs", type=int, dest="max_dofs")
    p.add_argument("--gamma", type=float)
    p.add_argument("--gamma-g", type=float, dest="gamma_g")
    p.add_argument("--rt-order", type=int, choices=(0, 1), dest="rt_order")
    p.add_argument("--mesh-n0", type=int, dest="mesh_n0")
    p.add_argument("--level-set", dest="level_set")
    p.add_argument("--mark-with-interface", type=_onoff, dest="mark_with_interface", metavar="on|off")
    p.add_argument("--out", dest="out_dir")


def _config(args):
    keys = ("theta", "max_dofs", "gamma", "gamma_g", "rt_order", "mesh_n0", "level_set",
            "mark_with_interface", "out_dir")
    return io.read_config(args.config, **{k: getattr(args, k) for k in keys})


def cmd_adapt(args):
    cfg = _config(args)
    out = io.ensure_dir(cfg.out_dir or "cutflux_out")

    def export(it, step):
        io.write_mesh_vtk(os.path.join(out, f"mesh_{it}.vtk"), step.mesh, step.cut, step.report)
        io.write_solution_vtk(os.path.join(out, f"solution_{it}.vtk"), step.u_h)
        io.write_flux_vtk(os.path.join(out, f"flux_{it}.vtk"), step.sigma, divergence_residual(step.sigma))

    trace = adaptive_loop(cfg, callback=export if args.vtk else None)
    trace.to_csv(os.path.join(out, "trace.csv"))
    io.write_config(os.path.join(out, "config.txt"), cfg)
    summary = io.write_summary(os.path.join(out, "summary.json"), trace, cfg)
    for r in trace.records:
        print(f"iter {r.iter:2d}  N {r.N:6d}  eta {r.eta:.4e}  eta_gamma {r.eta_gamma:.4e}  "
              f"error {r.error:.4e}  eff {r.effectivity:.3f}")
    print(f"slopes: error {summary['slopes']['error']}, eta {summary['slopes']['eta']}")
    return 0


def cmd_solve(args):
    cfg = _config(args)
    out = io.ensure_dir(cfg.out_dir or "cutflux_out")
    problem = problem_from_name(cfg.level_set, cfg.k_minus, cfg.k_plus)
    x0, x1, y0, y1 = problem.domain
    mesh = build_structured_mesh(cfg.mesh_n0, cfg.mesh_n0, (x0, x1, y0, y1))
    cut = classify_cells(mesh, problem.level_set)
    step = solve_and_estimate(mesh, problem, cfg.solver_config(), cut)
    rep = step.report
    io.write_mesh_vtk(os.path.join(out, "mesh_0.vtk"), mesh, cut, rep)
    io.write_solution_vtk(os.path.join(out, "solution_0.vtk"), step.u_h)
    io.write_flux_vtk(os.path.join(out, "flux_0.vtk"), step.sigma, divergence_residual(step.sigma))
    write_topology_csv(cut, os.path.join(out, "topology.csv"))
    step.theta.write_csv(os.path.join(out, "multipliers.csv"))
    rep.write_csv(os.path.join(out, "estimators.csv"), cut)
    print(f"N {step.u_h.n_dofs}  eta {rep.eta:.6e}  eta_gamma {rep.eta_gamma:.6e}  eps {rep.eps:.6e}  "
          f"error {rep.error:.6e}")
    print(f"conservation {step.conservation:.2e}  mixed eq1 {step.mixed['eq1']:.2e}")
    ok = step.conservation <= cfg.conservation_tol and step.mixed["eq1"] <= cfg.mixed_tol
    return 0 if ok and np.isfinite(rep.eta) else 1


def cmd_verify(args):
    return 0 if run_all() else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="cutflux", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("adapt", help="run the adaptive loop")
    _add_overrides(p)
    p.add_argument("--no-vtk", dest="vtk", action="store_false", help="skip per-iteration VTK files")
    p.set_defaults(func=cmd_adapt)
    p = sub.add_parser("solve", help="one solve on the initial mesh with exports")
    _add_overrides(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("verify", help="property checks on small meshes")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # report and exit non-zero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

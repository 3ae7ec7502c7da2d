"""File output (legacy VTK, CSV, run summaries) and the key/value run configuration."""
import configparser
import dataclasses
import json
import os

import numpy as np

from .adaptive import BenchmarkConfig, fit_convergence_rate


def _write_vtk(path, points, cells, cell_data=None, point_data=None, title="cutflux"):
    cell_data = cell_data or {}
    point_data = point_data or {}
    n, m = len(points), len(cells)
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, np.column_stack([points, np.zeros(n)]), fmt="%.16g")
        fh.write(f"CELLS {m} {4 * m}\n")
        np.savetxt(fh, np.column_stack([np.full(m, 3), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {m}\n")
        np.savetxt(fh, np.full(m, 5), fmt="%d")
        for header, count, data in (("CELL_DATA", m, cell_data), ("POINT_DATA", n, point_data)):
            if not data:
                continue
            fh.write(f"{header} {count}\n")
            for name, values in data.items():
                values = np.asarray(values, dtype=float)
                if values.ndim == 2:
                    fh.write(f"VECTORS {name} double\n")
                    np.savetxt(fh, np.column_stack([values, np.zeros(len(values))]), fmt="%.16g")
                else:
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    np.savetxt(fh, values, fmt="%.16g")


def write_mesh_vtk(path, mesh, cut=None, report=None):
    """Background mesh with element class and, if given, the per-element estimators."""
    data = {}
    if cut is not None:
        data["class"] = cut.classes
    if report is not None:
        data["eta_T"] = report.eta_t
        data["eta_gamma_T"] = report.eta_gamma_t
        data["osc_T"] = report.osc_t
    _write_vtk(path, mesh.vertices, mesh.triangles, data)


def write_solution_vtk(path, u_h):
    """Both solution copies on the sub-cells of their regions (discontinuous points)."""
    cut = u_h.cut
    pts, vals, reg = [], [], []
    for region in (1, 2):
        elem, coords = cut.region_cells(region)
        if not len(elem):
            continue
        pts.append(coords.reshape(-1, 2))
        vals.append(u_h.evaluate(region, elem, coords).ravel())
        reg.append(np.full(len(elem), region))
    pts = np.concatenate(pts)
    cells = np.arange(len(pts)).reshape(-1, 3)
    _write_vtk(path, pts, cells, {"region": np.concatenate(reg)}, {"u_h": np.concatenate(vals)})


def write_flux_vtk(path, sigma, residual=None):
    """Flux at element centroids and, optionally, the per-element divergence residual."""
    data = {"sigma": sigma.centroid_values()}
    if residual is not None:
        data["div_residual"] = residual
    _write_vtk(path, sigma.mesh.vertices, sigma.mesh.triangles, data)


def write_summary(path, trace, cfg, window=8, extra=None):
    """JSON summary with the configuration, final values and fitted slopes."""
    slopes = {}
    for q in ("error", "eta"):
        try:
            slopes[q] = fit_convergence_rate(trace, q, min(window, len(trace)))
        except ValueError:
            slopes[q] = None
    last = dataclasses.asdict(trace.records[-1]) if len(trace) else {}
    out = {"config": dataclasses.asdict(cfg), "iterations": len(trace), "final": last,
           "slopes": slopes, "slope_window": window}
    out.update(extra or {})
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, default=float)
    return out


def _coerce(value, typ):
    if typ in (bool, "bool"):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    if value.strip().lower() in ("none", ""):
        return None
    return value.strip()


def read_config(path, **overrides):
    """Read a flat ``key = value`` file into a :class:`BenchmarkConfig`.

    Keys are the field names of :class:`BenchmarkConfig`; ``#`` starts a
    comment. Keyword arguments that are not ``None`` override file values.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read())
        values.update(parser["run"])
    fields = {f.name: f.type for f in dataclasses.fields(BenchmarkConfig)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    kwargs = {k: _coerce(v, fields[k]) for k, v in values.items()}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return BenchmarkConfig(**kwargs)


def write_config(path, cfg):
    with open(path, "w") as fh:
        for f in dataclasses.fields(cfg):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path

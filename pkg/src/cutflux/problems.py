"""Model problems with known solutions."""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .geometry import LevelSet, petal_level_set, vertical_line
from .primal import DiffusionData

Pair = Tuple[Callable, Callable]


@dataclass
class InterfaceProblem:
    """Data of ``-div(k_i grad u^i) = f^i`` with Dirichlet data ``g`` and known ``u``."""

    name: str
    level_set: LevelSet
    K: DiffusionData
    f: Pair
    g: Pair
    exact: Optional[Pair] = None
    exact_grad: Optional[Pair] = None
    domain: tuple = (-1.0, 1.0, -1.0, 1.0)


def petal_source(x, y):
    """``-Laplace(phi)`` for the petal level set."""
    r2 = x * x + y * y
    th = np.arctan2(y, x)
    return -r2 * (16.0 - 64.0 * np.sin(12.0 * th))


def petal_problem(k_minus=1.0, k_plus=100.0):
    """Petal benchmark: ``u^i = phi / k_i`` so the flux ``k grad u`` is continuous."""
    ls = petal_level_set()
    K = DiffusionData(k_minus, k_plus)
    exact = (lambda x, y: ls(x, y) / K.k1, lambda x, y: ls(x, y) / K.k2)
    grad = (lambda x, y: ls.gradient(x, y) / K.k1, lambda x, y: ls.gradient(x, y) / K.k2)
    return InterfaceProblem("petal", ls, K, (petal_source, petal_source), exact, exact, grad)


def linear_interface_problem(c=0.3, k1=1.0, k2=100.0):
    """Straight interface ``x = c`` with the piecewise linear solution ``(x - c) / k_i``."""
    ls = vertical_line(c)
    K = DiffusionData(k1, k2)

    def zero(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    def sol(k):
        return lambda x, y: (np.asarray(x, dtype=float) - c) / k

    def grad(k):
        def g(x, y):
            x = np.asarray(x, dtype=float)
            return np.stack(np.broadcast_arrays(np.full_like(x, 1.0 / k), np.zeros_like(x)), axis=-1)
        return g

    exact = (sol(k1), sol(k2))
    return InterfaceProblem(f"vertical_line:{c}", ls, K, (zero, zero), exact, exact, (grad(k1), grad(k2)))


def problem_from_name(name, k_minus=1.0, k_plus=100.0):
    if name == "petal":
        return petal_problem(k_minus, k_plus)
    if name.startswith("vertical_line"):
        c = float(name.split(":", 1)[1]) if ":" in name else 0.3
        return linear_interface_problem(c, k_minus, k_plus)
    raise ValueError(f"no problem with a known solution is registered as {name!r}")


def check_gradient(level_set, points, step=1e-6):
    """Largest relative error between the analytic gradient and central differences."""
    x, y = np.asarray(points, dtype=float).T
    fd = np.column_stack([
        (level_set(x + step, y) - level_set(x - step, y)) / (2 * step),
        (level_set(x, y + step) - level_set(x, y - step)) / (2 * step),
    ])
    an = level_set.gradient(x, y)
    return float(np.max(np.linalg.norm(an - fd, axis=1) / np.maximum(np.linalg.norm(an, axis=1), 1e-300)))

"""Quadrature rules on triangles and segments.

Rules are stored in barycentric form (weights summing to one) and mapped to
physical cells by the callers. Triangle rules of degree >= 3 are conical
product (collapsed Gauss-Jacobi x Gauss-Legendre) rules.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature rule in physical coordinates.

    ``points`` has shape (n, 2) and ``weights`` (n,), scaled so that they sum
    to the measure of the cell (area for 2D rules, length for 1D rules).
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values):
        return float(np.dot(self.weights, values))


def _check_degree(degree):
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Barycentric triangle rule exact for polynomials of total degree ``degree``.

    Returns ``(lam, w)`` with ``lam`` of shape (n, 3) and ``w`` summing to one.
    """
    _check_degree(degree)
    if degree <= 1:
        lam = np.array([[1.0, 1.0, 1.0]]) / 3.0
        w = np.array([1.0])
    elif degree == 2:
        lam = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    else:
        n = (degree + 2) // 2
        s, ws = roots_jacobi(n, 1.0, 0.0)
        t, wt = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (1.0 + s)
        v = 0.5 * (1.0 + t)
        wu = ws / 4.0
        wv = wt / 2.0
        uu, vv = np.meshgrid(u, v, indexing="ij")
        x = uu.ravel()
        y = (vv * (1.0 - uu)).ravel()
        w = np.outer(wu, wv).ravel() * 2.0
        lam = np.column_stack([1.0 - x - y, x, y])
    _verify_triangle_rule(lam, w, degree)
    return lam, w


def _verify_triangle_rule(lam, w, degree):
    x, y = lam[:, 1], lam[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = 0.5 * np.dot(w, x**a * y**b)
            if abs(approx - exact) > 1e-13 * max(1.0, exact) + 1e-15:
                raise RuntimeError(f"triangle rule of degree {degree} fails on x^{a} y^{b}")


@lru_cache(maxsize=None)
def line_rule(degree):
    """Gauss-Legendre rule on [0, 1] exact to ``degree``; weights sum to one."""
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (1.0 + t), 0.5 * w


def map_triangle(coords, degree):
    """Map the reference rule onto a stack of triangles.

    ``coords`` has shape (m, 3, 2). Returns points (m, q, 2) and weights (m, q).
    """
    lam, w = triangle_rule(degree)
    coords = np.asarray(coords, dtype=float)
    pts = np.einsum("qj,mjd->mqd", lam, coords)
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return pts, area[:, None] * w[None, :]


def map_segment(a, b, degree):
    """Map the line rule onto segments ``a -> b`` (arrays of shape (m, 2))."""
    t, w = line_rule(degree)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    return pts, length[:, None] * w[None, :]

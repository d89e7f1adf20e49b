"""Quadrature rules on the reference triangle and the unit interval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates plus weights.

    Triangle weights sum to the reference area 1/2; interval weights sum
    to 1.  ``degree`` is the guaranteed polynomial exactness.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _orbit3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


# Symmetric positive rules; degree 3 is served by the 6-point degree-4 rule
# to avoid the negative centroid weight of the classical 4-point rule.
def _build_triangle_tables():
    third = 1.0 / 3.0
    tables = {}
    tables[1] = ([(third, third, third)], [1.0])
    tables[2] = (_orbit3(1.0 / 6.0), [third] * 3)

    a4, wa4 = 0.445948490915965, 0.223381589678011
    b4, wb4 = 0.091576213509771, 0.109951743655322
    pts4 = _orbit3(a4) + _orbit3(b4)
    w4 = [wa4] * 3 + [wb4] * 3
    tables[3] = (pts4, w4)
    tables[4] = (pts4, w4)

    a5, wa5 = 0.470142064105115, 0.132394152788506
    b5, wb5 = 0.101286507323456, 0.125939180544827
    tables[5] = ([(third, third, third)] + _orbit3(a5) + _orbit3(b5),
                 [0.225] + [wa5] * 3 + [wb5] * 3)

    a6, wa6 = 0.249286745170910, 0.116786275726379
    b6, wb6 = 0.063089014491502, 0.050844906370207
    c6x, c6y, wc6 = 0.310352451033785, 0.636502499121399, 0.082851075618374
    tables[6] = (_orbit3(a6) + _orbit3(b6) + _orbit6(c6x, c6y),
                 [wa6] * 3 + [wb6] * 3 + [wc6] * 6)
    return tables


_TRIANGLE_TABLES = _build_triangle_tables()


def triangle_quadrature(degree: int) -> QuadratureRule:
    """Symmetric Gauss rule on the reference triangle, exact to ``degree``."""
    if degree not in _TRIANGLE_TABLES:
        raise ValueError(f"unsupported triangle quadrature degree {degree}")
    pts, w = _TRIANGLE_TABLES[degree]
    weights = 0.5 * np.asarray(w, dtype=float)
    return QuadratureRule(np.asarray(pts, dtype=float), weights, degree)


def edge_quadrature(points: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact to degree 2*points - 1."""
    if not 1 <= points <= 5:
        raise ValueError(f"unsupported edge quadrature point count {points}")
    x, w = np.polynomial.legendre.leggauss(points)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * points - 1)

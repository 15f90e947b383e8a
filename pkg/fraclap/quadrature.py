# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from drresult import Ok, Result, noexcept, returns_result

from fraclap.errors import QuadratureError

"""
Quadrature rules on the reference triangle and on intervals.

Rules are given in barycentric coordinates with weights summing to one, so the
physical weight of a point on triangle T is `weight * |T|`.

Functions:
    - triangle_quadrature: Rule exact up to a total polynomial degree in 1..10.
    - collapsed_rule: Conical product rule with n points per direction.
    - interval_rule: Gauss-Legendre rule mapped to [0, 1].
"""

MAX_DEGREE = 10


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Quadrature rule on the reference triangle.

    Attributes:
        points (np.ndarray): Barycentric coordinates, shape (m, 3).
        weights (np.ndarray): Positive weights summing to one, shape (m,).
        degree (int): Total polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def _permutations(a: float, b: float) -> np.ndarray:
    return np.array([[a, b, b], [b, a, b], [b, b, a]])


def _centroid_rule() -> QuadratureRule:
    return QuadratureRule(np.full((1, 3), 1.0 / 3.0), np.ones(1), 1)


def _strang_fix_rule() -> QuadratureRule:
    return QuadratureRule(_permutations(2.0 / 3.0, 1.0 / 6.0), np.full(3, 1.0 / 3.0), 2)


def _radon_rule() -> QuadratureRule:
    r = math.sqrt(15.0)
    a1, a2 = (6.0 - r) / 21.0, (6.0 + r) / 21.0
    points = np.vstack(
        [
            np.full((1, 3), 1.0 / 3.0),
            _permutations(1.0 - 2.0 * a1, a1),
            _permutations(1.0 - 2.0 * a2, a2),
        ]
    )
    weights = np.concatenate(
        [[9.0 / 40.0], np.full(3, (155.0 - r) / 1200.0), np.full(3, (155.0 + r) / 1200.0)]
    )
    return QuadratureRule(points, weights, 5)


@noexcept
@lru_cache(maxsize=None)
def collapsed_rule(n: int) -> QuadratureRule:
    """Conical product rule with `n` points per direction.

    Gauss-Legendre in the collapsed direction times Gauss-Jacobi (alpha=1)
    across it. Exact for total degree 2n - 1. The collapsed direction points
    towards the third barycentric vertex.

    Args:
        n (int): Points per direction, at least 1.

    Returns:
        QuadratureRule: Rule with n * n points.
    """
    assert n >= 1
    x, wx = leggauss(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    xi = 0.5 * (1.0 + x)
    eta = 0.5 * (1.0 + t)
    X = np.outer(1.0 - eta, xi).ravel()
    Y = np.repeat(eta, n)
    weights = 2.0 * np.outer(wt / 4.0, wx / 2.0).ravel()
    points = np.column_stack([1.0 - X - Y, X, Y])
    return QuadratureRule(points, weights, 2 * n - 1)


@returns_result(expects=[QuadratureError])
def triangle_quadrature(degree: int) -> Result[QuadratureRule]:
    """Quadrature rule exact for bivariate polynomials up to `degree`.

    Degree 1 is the centroid rule, degree 2 the three-point interior rule,
    degree 5 the seven-point Radon rule. All other degrees use collapsed
    Gauss rules.

    Args:
        degree (int): Total polynomial degree in 1..10.

    Returns:
        Result[QuadratureRule]: The rule, or `Err(QuadratureError)`.
    """
    if not 1 <= degree <= MAX_DEGREE:
        raise QuadratureError(f'unsupported quadrature degree {degree}, expected 1..{MAX_DEGREE}')
    return Ok(_rule_for_degree(degree))


@lru_cache(maxsize=None)
def _rule_for_degree(degree: int) -> QuadratureRule:
    match degree:
        case 1:
            return _centroid_rule()
        case 2:
            return _strang_fix_rule()
        case 5:
            return _radon_rule()
        case _:
            rule = collapsed_rule(math.ceil((degree + 1) / 2))
            return QuadratureRule(rule.points, rule.weights, degree)


@noexcept
@lru_cache(maxsize=None)
def interval_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = leggauss(n)
    return 0.5 * (1.0 + x), 0.5 * w

# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass
from math import factorial
from typing import Callable, Iterator
import logging
import math

import numpy as np

from drresult import Err, Ok, Result, returns_result

from fraclap.errors import FracLapError
from fraclap.fields import ControlField, LoadVector
from fraclap.fracfem import AssemblyConfig, FracParams, assemble_coupling
from fraclap.mesh import make_disc_mesh, make_polygon_mesh, refine_uniform
from fraclap.optctl import (
    ProblemData,
    curvature_form,
    make_problem,
    reduced_gradient,
    reduced_objective,
)
from fraclap.quadrature import MAX_DEGREE, triangle_quadrature
from fraclap.solver import PdeSystem, solve_adjoint, solve_linearized_state, solve_state
from fraclap.stiffness import Disc, assemble_stiffness, complement_weight
from fraclap.verify import build_case

"""
Property suites run by `fraclap --mode selfcheck`.

Every suite is a function returning `Ok(message)` when the property holds and
raising `CheckFailed` otherwise. The suites use a 48-triangle disc mesh and
finish in seconds.

Classes:
    - SuiteOutcome: Name, verdict and message of one suite.

Functions:
    - run_suites: Run all suites and collect the outcomes.
"""

logger = logging.getLogger(__name__)

PAIRS = 5


class CheckFailed(FracLapError):
    pass


@dataclass(frozen=True)
class SuiteOutcome:
    name: str
    passed: bool
    message: str

    def __str__(self) -> str:
        return f'{"PASS" if self.passed else "FAIL"} {self.name}: {self.message}'


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


@returns_result(expects=[FracLapError])
def check_quadrature(seed: int) -> Result[str]:
    """Triangle rules integrate x^i y^j exactly up to their degree."""
    worst = 0.0
    for degree in range(1, MAX_DEGREE + 1):
        rule = triangle_quadrature(degree).unwrap_or_raise()
        x, y = rule.points[:, 1], rule.points[:, 2]
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                exact = factorial(i) * factorial(j) / factorial(i + j + 2)
                value = 0.5 * float(rule.weights @ (x**i * y**j))
                worst = max(worst, abs(value - exact) / exact)
    _check(worst < 1e-12, f'monomial error {worst:.3e}')
    return Ok(f'degrees 1..{MAX_DEGREE}, worst relative error {worst:.1e}')


@returns_result(expects=[FracLapError])
def check_mesh(seed: int) -> Result[str]:
    """Generated and refined meshes satisfy the mesh invariants."""
    disc = make_disc_mesh(16).unwrap_or_raise()
    refine_uniform(disc).validate().unwrap_or_raise()
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    make_polygon_mesh(square, 6).unwrap_or_raise().validate().unwrap_or_raise()
    return Ok(f'disc {disc.n_triangles} triangles, refined and square meshes valid')


@returns_result(expects=[FracLapError])
def check_stiffness(seed: int) -> Result[str]:
    """Stiffness is exactly symmetric and Cholesky-factorizable; omega(0) = pi/s on the disc."""
    mesh = make_disc_mesh(16).unwrap_or_raise()
    for s in (0.25, 0.75):
        params = FracParams(s).unwrap_or_raise()
        K = assemble_stiffness(mesh, params, AssemblyConfig()).unwrap_or_raise()
        _check(np.isfinite(K.matrix).all(), f's={s}: stiffness has non-finite entries')
        _check(np.array_equal(K.matrix, K.matrix.T), f's={s}: stiffness is not symmetric')
        try:
            np.linalg.cholesky(K.matrix)
        except np.linalg.LinAlgError:
            raise CheckFailed(f's={s}: stiffness is not positive definite')
        centre = complement_weight(np.zeros(2), Disc(), params).unwrap_or_raise()
        _check(abs(centre - math.pi / s) < 1e-8 * math.pi / s, f'omega(0) = {centre}')
    return Ok(f'n={mesh.n_interior}, symmetric, SPD, omega(0) = pi/s')


def _small_problem() -> ProblemData:
    mesh = make_disc_mesh(16).unwrap_or_raise()
    case = build_case(2, 0.5).unwrap_or_raise()
    K = assemble_stiffness(mesh, FracParams(0.5).unwrap_or_raise()).unwrap_or_raise()
    return make_problem(mesh, K, case.f, case.u_des, case.lam, case.a, case.b).unwrap_or_raise()


def _pairs(data: ProblemData, seed: int) -> Iterator[tuple[ControlField, np.ndarray]]:
    # admissible controls inside (a, b) with random directions
    rng = np.random.default_rng(seed)
    n = data.mesh.n_triangles
    for _ in range(PAIRS):
        q = ControlField(data.mesh, rng.uniform(0.1, 0.9, n), data.a, data.b)
        yield q, rng.standard_normal(n)


def _j(data: ProblemData, q: ControlField) -> float:
    return reduced_objective(q, data).unwrap_or_raise().j_value


def _gradient(data: ProblemData, q: ControlField) -> np.ndarray:
    system = PdeSystem(data.K, data.mesh, q)
    u = solve_state(system, LoadVector(data.F)).unwrap_or_raise()
    p = solve_adjoint(system, u, LoadVector(data.U)).unwrap_or_raise()
    return reduced_gradient(q, u, p, data.lam)


@returns_result(expects=[FracLapError])
def check_gradient(seed: int) -> Result[str]:
    """<j'(q), w> agrees with a central difference of j at eps = 1e-5 for every pair."""
    data = _small_problem()
    eps = 1e-5
    worst = 0.0
    for q, w in _pairs(data, seed):
        analytic = q.inner(_gradient(data, q), w)
        plus = _j(data, q.with_values(q.values + eps * w))
        minus = _j(data, q.with_values(q.values - eps * w))
        numeric = (plus - minus) / (2.0 * eps)
        worst = max(worst, abs(analytic - numeric) / abs(numeric))
    _check(worst < 1e-4, f'relative gradient error {worst:.3e}')
    return Ok(f'{PAIRS} directions, worst relative error {worst:.1e}')


@returns_result(expects=[FracLapError])
def check_curvature(seed: int) -> Result[str]:
    """j''(q)[w, w] agrees with the second difference of j at eps = 1e-3 for every pair."""
    data = _small_problem()
    eps = 1e-3
    worst = 0.0
    for q, w in _pairs(data, seed):
        analytic = curvature_form(q, w, data).unwrap_or_raise()
        plus = _j(data, q.with_values(q.values + eps * w))
        minus = _j(data, q.with_values(q.values - eps * w))
        numeric = (plus - 2.0 * _j(data, q) + minus) / eps**2
        worst = max(worst, abs(analytic - numeric) / abs(numeric))
    _check(worst < 1e-3, f'relative curvature error {worst:.3e}')
    return Ok(f'{PAIRS} directions, worst relative error {worst:.1e}')


@returns_result(expects=[FracLapError])
def check_adjoint(seed: int) -> Result[str]:
    """(M u - U) . z = -B(w, u) . p for the linearized state z."""
    data = _small_problem()
    worst = 0.0
    for q, w in _pairs(data, seed):
        system = PdeSystem(data.K, data.mesh, q)
        u = solve_state(system, LoadVector(data.F)).unwrap_or_raise()
        p = solve_adjoint(system, u, LoadVector(data.U)).unwrap_or_raise()
        direction = q.with_values(w)
        z = solve_linearized_state(system, u, direction).unwrap_or_raise()
        lhs = float((system.M @ u.values - data.U) @ z.values)
        rhs = -float(assemble_coupling(data.mesh, direction, u).unwrap_or_raise() @ p.values)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    _check(worst < 1e-10, f'adjoint identity defect {worst:.3e}')
    return Ok(f'worst relative defect {worst:.1e}')


SUITES: dict[str, Callable[[int], Result[str]]] = {
    'quadrature': check_quadrature,
    'mesh': check_mesh,
    'stiffness': check_stiffness,
    'gradient': check_gradient,
    'curvature': check_curvature,
    'adjoint': check_adjoint,
}


def run_suites(seed: int = 0) -> list[SuiteOutcome]:
    """Run every suite in `SUITES`; failures are collected, not raised."""
    outcomes = []
    for name, suite in SUITES.items():
        match suite(seed):
            case Ok(message):
                outcome = SuiteOutcome(name, True, message)
            case Err(e):
                outcome = SuiteOutcome(name, False, str(e))
        logger.info(str(outcome))
        outcomes.append(outcome)
    return outcomes

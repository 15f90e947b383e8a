# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass, replace
from typing import Literal, Optional
import logging

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from drresult import Ok, Result, noexcept, returns_result

from fraclap.errors import ControlError, ParameterError, numerical_expects
from fraclap.fields import (
    AdjointField,
    ControlField,
    ControlKind,
    LoadVector,
    PointFunction,
    StateField,
)
from fraclap.fracfem import StiffnessMatrix, assemble_coupling, assemble_load
from fraclap.mesh import ElementPoints, TriMesh
from fraclap.quadrature import triangle_quadrature
from fraclap.solver import (
    PdeSystem,
    solve_adjoint,
    solve_linearized_adjoint,
    solve_linearized_state,
    solve_state,
)

"""
Bilinear optimal control: admissible set, reduced functional and optimizers.

The problem is to minimize 1/2 ||u - u_des||^2 + lam/2 ||q||^2 subject to
(-Delta)^s u + q u = f and a <= q <= b. Controls are either piecewise constant
(fully discrete scheme) or given at the nodes of a degree-4 rule and induced
by the projection formula (semidiscrete scheme). Both are solved by a
semismooth Newton method on q = Pi(u p / lam) with a projected gradient fallback.

Classes:
    - ProblemData: Discretized data of one optimal control problem.
    - OptimizerConfig: Tolerances and iteration caps.
    - ReducedObjectiveReport: Value of the reduced functional and its parts.
    - OptimizeResult: Optimal control, state, adjoint and histories.

Functions:
    - project_box: Clamp to [a, b].
    - p0_project: Element averages.
    - make_problem: Assemble `ProblemData`.
    - reduced_objective, reduced_gradient, curvature_form: Derivatives of j.
    - optimize_fully_discrete, optimize_semidiscrete: The two schemes.
"""

logger = logging.getLogger(__name__)

type Scheme = Literal['fully_discrete', 'semidiscrete']
type Data = PointFunction | float


@returns_result(expects=[ControlError])
def project_box[T: (float, np.ndarray)](v: T, a: float, b: float) -> Result[T]:
    """min(b, max(v, a)), elementwise for arrays.

    Returns:
        Result: The clamped value, or `Err(ControlError)` if a > b.
    """
    if a > b:
        raise ControlError(f'empty box [{a}, {b}]')
    if isinstance(v, np.ndarray):
        return Ok(np.clip(v, a, b))
    return Ok(min(b, max(v, a)))


@noexcept
def p0_project(mesh: TriMesh, g: PointFunction | tuple[StateField, StateField]) -> np.ndarray:
    """Element averages (1/|T|) * integral over T of g.

    Args:
        mesh (TriMesh): The mesh.
        g: A vectorized function, integrated with the degree-4 rule, or a pair
            of P1 fields whose product is averaged exactly with the degree-2 rule.

    Returns:
        np.ndarray: One value per triangle.
    """
    if isinstance(g, tuple):
        rule = triangle_quadrature(2).unwrap()
        points = mesh.points(rule)
        values = g[0].at(points) * g[1].at(points)
    else:
        rule = triangle_quadrature(4).unwrap()
        points = mesh.points(rule)
        values = np.asarray(g(points.coordinates), dtype=float)
    return points.element_sums(values, mesh.n_triangles) / mesh.areas


def _values(data: Data, points: ElementPoints) -> np.ndarray:
    if isinstance(data, (int, float)):
        return np.full(len(points), float(data))
    return np.asarray(data(points.coordinates), dtype=float)


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Discretized optimal control problem.

    Attributes:
        mesh (TriMesh): The mesh.
        K (StiffnessMatrix): Stiffness matrix.
        F (np.ndarray): Load vector of f.
        U (np.ndarray): Load vector of the desired state.
        tracking_points (ElementPoints): Rule of the tracking term, degree 7
            on elements touching the boundary and 4 elsewhere.
        u_des_values (np.ndarray): Desired state at `tracking_points`.
        lam (float): Regularization parameter.
        a (float): Lower control bound.
        b (float): Upper control bound.
    """

    mesh: TriMesh
    K: StiffnessMatrix
    F: np.ndarray
    U: np.ndarray
    tracking_points: ElementPoints
    u_des_values: np.ndarray
    lam: float
    a: float
    b: float


@returns_result(expects=[ControlError, ParameterError])
def make_problem(
    mesh: TriMesh,
    K: StiffnessMatrix,
    f: Data,
    u_des: Data,
    lam: float = 1.0,
    a: float = 0.0,
    b: float = 1.0,
) -> Result[ProblemData]:
    """Assemble the data of an optimal control problem.

    Returns:
        Result[ProblemData]: The data, or `Err` for bounds violating 0 <= a < b
        or a non-positive `lam`.
    """
    if not 0.0 <= a < b:
        raise ControlError(f'control bounds must satisfy 0 <= a < b, got a={a}, b={b}')
    if not lam > 0.0:
        raise ParameterError(f'regularization parameter must be positive, got {lam}')
    points = mesh.mixed_points(4, 7)
    F = assemble_load(mesh, f if callable(f) else float(f), points)
    U = assemble_load(mesh, u_des if callable(u_des) else float(u_des), points)
    return Ok(ProblemData(mesh, K, F, U, points, _values(u_des, points), lam, a, b))


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of the semismooth Newton method and its fallback.

    Attributes:
        scheme (Scheme): `fully_discrete` or `semidiscrete`.
        tol_residual (float): Stopping tolerance on ||q - Pi(u p / lam)||.
        max_newton (int): Newton step budget.
        max_fallback (int): Projected gradient step budget.
        armijo_c (float): Sufficient decrease constant.
        armijo_backtrack (float): Step reduction factor.
        max_backtracks (int): Step reductions per fallback step.
        newton_decrease (float): Required residual reduction of a Newton step.
        krylov_rtol (float): Upper bound of the inner GMRES tolerance.
        krylov_maxiter (int): GMRES iteration cap.
    """

    scheme: Scheme = 'fully_discrete'
    tol_residual: float = 1e-9
    max_newton: int = 30
    max_fallback: int = 200
    armijo_c: float = 1e-4
    armijo_backtrack: float = 0.5
    max_backtracks: int = 40
    newton_decrease: float = 0.9
    krylov_rtol: float = 1e-2
    krylov_maxiter: int = 200

    @returns_result(expects=[ParameterError])
    def validate(self) -> Result['OptimizerConfig']:
        if self.scheme not in ('fully_discrete', 'semidiscrete'):
            raise ParameterError(f'unknown scheme {self.scheme!r}')
        positive = ('tol_residual', 'armijo_c', 'krylov_rtol', 'max_backtracks', 'krylov_maxiter')
        for name in positive:
            if not getattr(self, name) > 0:
                raise ParameterError(f'{name} must be positive, got {getattr(self, name)}')
        if self.max_newton < 0 or self.max_fallback < 0:
            raise ParameterError('iteration budgets must not be negative')
        for name in ('armijo_backtrack', 'newton_decrease'):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f'{name} must lie in (0, 1), got {getattr(self, name)}')
        return Ok(self)


@dataclass(frozen=True)
class ReducedObjectiveReport:
    j_value: float
    tracking_term: float
    regularization_term: float
    lam: float


def _tracking(u: StateField, data: ProblemData) -> float:
    diff = u.at(data.tracking_points) - data.u_des_values
    return 0.5 * data.tracking_points.integrate(diff * diff)


def _report(q: ControlField, u: StateField, data: ProblemData) -> ReducedObjectiveReport:
    tracking = _tracking(u, data)
    regularization = 0.5 * data.lam * q.norm() ** 2
    return ReducedObjectiveReport(tracking + regularization, tracking, regularization, data.lam)


def _system(data: ProblemData, q: ControlField, system: Optional[PdeSystem]) -> PdeSystem:
    if system is None:
        return PdeSystem(data.K, data.mesh, q)
    system.update_control(q)
    return system


def _state_and_adjoint(
    system: PdeSystem, data: ProblemData
) -> tuple[StateField, AdjointField]:
    u = solve_state(system, LoadVector(data.F)).unwrap_or_raise()
    p = solve_adjoint(system, u, LoadVector(data.U)).unwrap_or_raise()
    return u, p


@returns_result(expects=numerical_expects)
def reduced_objective(
    q: ControlField, data: ProblemData, system: Optional[PdeSystem] = None
) -> Result[ReducedObjectiveReport]:
    """j(q) = 1/2 ||u_h(q) - u_des||^2 + lam/2 ||q||^2."""
    system = _system(data, q, system)
    u = solve_state(system, LoadVector(data.F)).unwrap_or_raise()
    return Ok(_report(q, u, data))


def _density(q: ControlField, u: StateField, p: StateField) -> np.ndarray:
    # u p on the control layout: element averages for p0, node values otherwise
    points = q.mesh.points(q.rule)
    values = (u.at(points) * p.at(points)).reshape(q.mesh.n_triangles, q.rule.size)
    if q.kind == 'p0':
        return values @ q.rule.weights
    return values


@noexcept
def reduced_gradient(
    q: ControlField, u_h: StateField, p_h: AdjointField, lam: float
) -> np.ndarray:
    """L2 representative of j'(q): lam q - u_h p_h on the control layout.

    For a p0 control the product is averaged over each triangle.
    """
    return lam * q.values - _density(q, u_h, p_h)


@returns_result(expects=numerical_expects)
def curvature_form(
    q: ControlField, w: np.ndarray, data: ProblemData, system: Optional[PdeSystem] = None
) -> Result[float]:
    """j''(q)[w, w] = lam ||w||^2 - 2 (w z, p) + ||z||^2 with z the linearized state."""
    system = _system(data, q, system)
    u, p = _state_and_adjoint(system, data)
    direction = q.with_values(np.asarray(w, dtype=float))
    z = solve_linearized_state(system, u, direction).unwrap_or_raise()
    coupling = assemble_coupling(data.mesh, direction, p).unwrap_or_raise()
    value = (
        data.lam * q.norm(direction.values) ** 2
        - 2.0 * float(z.values @ coupling)
        + float(z.values @ (system.M @ z.values))
    )
    return Ok(value)


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    """Outcome of an optimization run.

    Attributes:
        q_opt (ControlField): Final control; a semidiscrete control carries its generator.
        u_opt (StateField): State at `q_opt`.
        p_opt (AdjointField): Adjoint at `q_opt`.
        residual_history (list[float]): ||q - Pi(u p / lam)|| per iterate.
        j_history (list[float]): Reduced functional per iterate.
        steps (list[str]): `newton` or `fallback` for every accepted step.
        converged (bool): Final residual below the tolerance.
        scheme (Scheme): Scheme that produced the result.
        lam (float): Regularization parameter.
    """

    q_opt: ControlField
    u_opt: StateField
    p_opt: AdjointField
    residual_history: list[float]
    j_history: list[float]
    steps: list[str]
    converged: bool
    scheme: Scheme
    lam: float
    newton_steps: int = 0
    fallback_steps: int = 0

    @property
    def iterations(self) -> int:
        return len(self.steps)

    def active_fractions(self, tol: float = 1e-8) -> tuple[float, float]:
        """Area fractions where the control is within `tol` of the lower and of the upper bound."""
        q = self.q_opt
        weights = q.weights
        total = float(weights.sum())
        lower = float(weights[q.values <= q.a + tol].sum()) / total
        upper = float(weights[q.values >= q.b - tol].sum()) / total
        return lower, upper

    def report(self) -> str:
        lower, upper = self.active_fractions()
        lines = [
            f'scheme: {self.scheme}',
            f'converged: {"yes" if self.converged else "no"}',
            f'iterations: {self.iterations} (newton {self.newton_steps}, '
            f'fallback {self.fallback_steps})',
            f'final residual: {self.residual_history[-1]:.6e}',
            f'final j: {self.j_history[-1]:.12e}',
            f'active fraction: {lower + upper:.6f} (lower {lower:.6f}, upper {upper:.6f})',
            f'lambda: {self.lam:g}',
            'history:',
        ]
        lines += [
            f'  {k} {step} {r:.6e} {j:.12e}'
            for k, (step, r, j) in enumerate(
                zip(['start'] + self.steps, self.residual_history, self.j_history)
            )
        ]
        return '\n'.join(lines) + '\n'


@dataclass(frozen=True, eq=False)
class _Iterate:
    q: ControlField
    u: StateField
    p: AdjointField
    density: np.ndarray
    residual_vector: np.ndarray
    residual: float
    j: float


class _SemismoothNewton:
    """Semismooth Newton on F(q) = q - Pi(u(q) p(q) / lam) with projected gradient fallback."""

    def __init__(self, data: ProblemData, cfg: OptimizerConfig, kind: ControlKind) -> None:
        self.data = data
        self.cfg = cfg
        q0 = ControlField.constant(data.mesh, 0.5 * (data.a + data.b), data.a, data.b, kind)
        self.system = PdeSystem(data.K, data.mesh, q0)
        self.q0 = q0

    def evaluate(self, q: ControlField) -> _Iterate:
        self.system.update_control(q)
        u, p = _state_and_adjoint(self.system, self.data)
        density = _density(q, u, p)
        target = np.clip(density / self.data.lam, self.data.a, self.data.b)
        residual_vector = q.values - target
        j = _report(q, u, self.data).j_value
        return _Iterate(q, u, p, density, residual_vector, q.norm(residual_vector), j)

    def newton_trial(self, it: _Iterate) -> _Iterate:
        data, q = self.data, it.q
        self.system.update_control(q)
        ratio = it.density / data.lam
        inactive = ((ratio > data.a) & (ratio < data.b)).astype(float)
        scale = np.sqrt(q.weights)
        shape = q.values.shape

        def jacobian(y: np.ndarray) -> np.ndarray:
            delta = y.reshape(shape) / scale
            w = q.with_values(delta)
            z = solve_linearized_state(self.system, it.u, w).unwrap_or_raise()
            dp = solve_linearized_adjoint(self.system, z, it.p, w).unwrap_or_raise()
            d_density = _density(q, z, it.p) + _density(q, it.u, dp)
            return (scale * (delta - inactive * d_density / data.lam)).ravel()

        size = q.values.size
        operator = LinearOperator((size, size), matvec=jacobian, dtype=float)
        rhs = -(scale * it.residual_vector).ravel()
        rtol = min(self.cfg.krylov_rtol, it.residual)
        y, info = gmres(
            operator, rhs, rtol=rtol, atol=0.0, restart=50, maxiter=self.cfg.krylov_maxiter
        )
        logger.debug(f'newton: gmres info={info}, rtol={rtol:.2e}')
        step = y.reshape(shape) / scale
        return self.evaluate(q.with_values(np.clip(q.values + step, data.a, data.b)))

    def fallback_trial(self, it: _Iterate) -> Optional[_Iterate]:
        data, q, cfg = self.data, it.q, self.cfg
        gradient = data.lam * q.values - it.density
        t = 1.0 / data.lam
        for _ in range(cfg.max_backtracks):
            candidate = q.with_values(np.clip(q.values - t * gradient, data.a, data.b))
            trial = self.evaluate(candidate)
            decrease = q.inner(gradient, candidate.values - q.values)
            if trial.j <= it.j + cfg.armijo_c * decrease and decrease < 0.0:
                logger.debug(f'fallback: accepted t={t:.3e}, j={trial.j:.12e}')
                return trial
            t *= cfg.armijo_backtrack
        logger.warning(f'fallback: no sufficient decrease after {cfg.max_backtracks} reductions')
        return None

    def run(self) -> OptimizeResult:
        cfg = self.cfg
        it = self.evaluate(self.q0)
        residuals, values, steps = [it.residual], [it.j], []
        newton_steps = fallback_steps = 0
        while it.residual > cfg.tol_residual:
            if newton_steps < cfg.max_newton:
                newton_steps += 1
                trial = self.newton_trial(it)
                if trial.residual <= cfg.newton_decrease * it.residual:
                    it = trial
                    residuals.append(it.residual)
                    values.append(it.j)
                    steps.append('newton')
                    logger.debug(f'newton {newton_steps}: residual {it.residual:.6e}')
                    continue
                logger.debug(f'newton {newton_steps}: rejected, residual {trial.residual:.3e}')
            if fallback_steps >= cfg.max_fallback:
                break
            fallback_steps += 1
            fallback = self.fallback_trial(it)
            if fallback is None:
                break
            it = fallback
            residuals.append(it.residual)
            values.append(it.j)
            steps.append('fallback')
        converged = it.residual <= cfg.tol_residual
        logger.info(
            f'{cfg.scheme}: {"converged" if converged else "stopped"} after {len(steps)} steps, '
            f'residual {it.residual:.3e}'
        )
        q = it.q
        if q.kind == 'nodal':
            q = ControlField(q.mesh, q.values, q.a, q.b, q.kind, (it.u, it.p, self.data.lam))
        return OptimizeResult(
            q,
            it.u,
            it.p,
            residuals,
            values,
            steps,
            converged,
            cfg.scheme,
            self.data.lam,
            newton_steps,
            fallback_steps,
        )


@returns_result(expects=numerical_expects)
def optimize_fully_discrete(data: ProblemData, cfg: OptimizerConfig) -> Result[OptimizeResult]:
    """Fully discrete scheme with piecewise constant controls.

    Returns:
        Result[OptimizeResult]: The result, also when the budget ran out
        (`converged` is then False), or `Err` for invalid settings or a
        singular system.
    """
    cfg.validate().unwrap_or_raise()
    cfg = replace(cfg, scheme='fully_discrete')
    return Ok(_SemismoothNewton(data, cfg, 'p0').run())


@returns_result(expects=numerical_expects)
def optimize_semidiscrete(data: ProblemData, cfg: OptimizerConfig) -> Result[OptimizeResult]:
    """Variational discretization: the control is Pi(u_h p_h / lam) at quadrature nodes.

    Returns:
        Result[OptimizeResult]: As `optimize_fully_discrete`; the control keeps
        the generating state and adjoint so it can be evaluated anywhere.
    """
    cfg.validate().unwrap_or_raise()
    cfg = replace(cfg, scheme='semidiscrete')
    return Ok(_SemismoothNewton(data, cfg, 'nodal').run())


@returns_result(expects=numerical_expects)
def optimize(data: ProblemData, cfg: OptimizerConfig) -> Result[OptimizeResult]:
    """Dispatch on `cfg.scheme`."""
    match cfg.scheme:
        case 'semidiscrete':
            return optimize_semidiscrete(data, cfg)
        case _:
            return optimize_fully_discrete(data, cfg)

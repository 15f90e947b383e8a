# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional
import logging
import math

import numpy as np
from scipy.special import gamma

from drresult import Err, Ok, Result, noexcept, returns_result

from fraclap.errors import (
    CaseError,
    ConvergenceError,
    ParameterError,
    io_expects,
    numerical_expects,
)
from fraclap.fields import ControlField, interpolate
from fraclap.fracfem import (
    AssemblyConfig,
    FracParams,
    StiffnessMatrix,
    assemble_load,
    energy_norm,
)
from fraclap.logging import log_stage
from fraclap.mesh import TriMesh, make_disc_mesh, refine_uniform
from fraclap.optctl import (
    OptimizeResult,
    OptimizerConfig,
    Scheme,
    make_problem,
    optimize,
)
from fraclap.solver import PdeSystem, solve_state
from fraclap.stiffness import assemble_stiffness

"""
Manufactured solutions, error norms and convergence tables.

All examples live on the unit disc with the exact state and adjoint
c_s (1 - |x|^2)^s, which solves (-Delta)^s u = 1. The data f and u_des are
derived from the optimality system.

Classes:
    - ManufacturedCase: Exact solution and data of one example.
    - ErrorRecord: Errors of one optimization run.
    - EocTable: Errors per mesh with experimental orders of convergence.
    - BallStudy: Errors of the plain ball problem with q = 0.

Functions:
    - build_case: Examples 1, 2 and 3.
    - mesh_family: Nested meshes of the unit disc.
    - error_norms: Errors of a result against a case.
    - control_distance: L2 distance of two controls.
    - run_convergence_study: Error tables over a mesh family.
    - run_ball_study, check_ball_identity: Checks of the plain solver.
    - gnuplot_script: Plot script for a study CSV.
"""

logger = logging.getLogger(__name__)

BASE_BOUNDARY_VERTICES = 16
ERROR_COLUMNS = ('e_u_s', 'e_u_L2', 'e_p_s', 'e_p_L2', 'e_q_L2')
CSV_HEADER = ','.join(
    ('h',) + ERROR_COLUMNS + tuple(f'eoc{name[1:]}' for name in ERROR_COLUMNS) + ('status',)
)


def ball_constant(s: float) -> float:
    """c_s = 1 / (2^{2s} Gamma(1 + s)^2), the value at the origin of the ball solution."""
    return 1.0 / (4.0**s * gamma(1.0 + s) ** 2)


@dataclass(frozen=True)
class ManufacturedCase:
    """Example with known optimal state, adjoint and control.

    Attributes:
        example (int): 1, 2 or 3.
        s (float): Fractional order.
        lam (float): Regularization parameter.
        a (float): Lower control bound.
        b (float): Upper control bound.
        c_s (float): Ball solution constant.
        peak (float): Maximum of u p, attained at the origin, equal to c_s^2.
    """

    example: int
    s: float
    lam: float
    a: float
    b: float
    c_s: float
    peak: float

    def _bubble(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(1.0 - np.sum(np.asarray(x) ** 2, axis=-1), 0.0)

    def exact_u(self, x: np.ndarray) -> np.ndarray:
        return self.c_s * self._bubble(x) ** self.s

    def exact_p(self, x: np.ndarray) -> np.ndarray:
        return self.exact_u(x)

    def exact_q(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.peak * self._bubble(x) ** (2.0 * self.s) / self.lam, self.a, self.b)

    def f(self, x: np.ndarray) -> np.ndarray:
        return 1.0 + self.exact_q(x) * self.exact_u(x)

    def u_des(self, x: np.ndarray) -> np.ndarray:
        return self.exact_u(x) - 1.0 - self.exact_q(x) * self.exact_p(x)


@returns_result(expects=[CaseError, ParameterError])
def build_case(example: int, s: float, lam: float = 1.0) -> Result[ManufacturedCase]:
    """Manufactured problem of the given example.

    Example 1 has a = 0 and b = 0.5, which never binds. Examples 2 and 3 have
    b = 1.5 and a lower bound at 0.1% and 95% of max(u p).

    Returns:
        Result[ManufacturedCase]: The case, or `Err` for an unknown example or
        an order outside (0, 1).
    """
    FracParams(s).unwrap_or_raise()
    if not lam > 0.0:
        raise ParameterError(f'regularization parameter must be positive, got {lam}')
    c_s = ball_constant(s)
    peak = c_s * c_s
    match example:
        case 1:
            a, b = 0.0, 0.5
        case 2:
            a, b = 0.001 * peak, 1.5
        case 3:
            a, b = 0.95 * peak, 1.5
        case _:
            raise CaseError(f'unknown example {example!r}, expected 1, 2 or 3')
    return Ok(ManufacturedCase(example, float(s), float(lam), a, b, c_s, peak))


@noexcept
def mesh_family(levels: int, n_boundary: int = BASE_BOUNDARY_VERTICES) -> list[TriMesh]:
    """Nested meshes: `levels` successive uniform refinements of `make_disc_mesh(n_boundary)`."""
    mesh = make_disc_mesh(n_boundary).unwrap()
    family = []
    for _ in range(levels):
        mesh = refine_uniform(mesh)
        family.append(mesh)
    return family


@dataclass(frozen=True)
class ErrorRecord:
    """Errors of one run.

    The energy errors are the computable surrogates ||I_h u - u_h||_s with the
    nodal interpolant I_h. `saturated` marks runs whose L2 state error is below
    the interpolation error, where the surrogate no longer reflects the
    Galerkin error.
    """

    h: float
    e_u_s: float
    e_u_L2: float
    e_p_s: float
    e_p_L2: float
    e_q_L2: float
    interpolation_L2: float
    saturated: bool

    def errors(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in ERROR_COLUMNS)


@returns_result(expects=numerical_expects)
def error_norms(
    result: OptimizeResult, case: ManufacturedCase, K: StiffnessMatrix
) -> Result[ErrorRecord]:
    """Errors of an optimization result against the exact solution.

    L2 errors are integrated on the degree-7 rule near the boundary and the
    degree-4 rule elsewhere.

    Returns:
        Result[ErrorRecord]: The errors, or `Err(ConvergenceError)` for a run
        that did not converge.
    """
    if not result.converged:
        raise ConvergenceError(
            f'{result.scheme} run did not converge, residual {result.residual_history[-1]:.3e}'
        )
    mesh = result.u_opt.mesh
    points = mesh.mixed_points(4, 7)
    exact_u = case.exact_u(points.coordinates)

    def l2(values: np.ndarray) -> float:
        return math.sqrt(max(points.integrate(values * values), 0.0))

    u_interp = interpolate(mesh, case.exact_u)
    p_interp = interpolate(mesh, case.exact_p)
    e_u_L2 = l2(result.u_opt.at(points) - exact_u)
    interpolation_L2 = l2(mesh.evaluate(mesh.nodal(u_interp), points) - exact_u)
    record = ErrorRecord(
        h=mesh.h_max,
        e_u_s=energy_norm(K, u_interp - result.u_opt.values).unwrap_or_raise(),
        e_u_L2=e_u_L2,
        e_p_s=energy_norm(K, p_interp - result.p_opt.values).unwrap_or_raise(),
        e_p_L2=l2(result.p_opt.at(points) - case.exact_p(points.coordinates)),
        e_q_L2=l2(result.q_opt.evaluate_at(points) - case.exact_q(points.coordinates)),
        interpolation_L2=interpolation_L2,
        saturated=e_u_L2 < interpolation_L2,
    )
    if record.saturated:
        logger.debug(f'h={record.h:.3e}: state error below interpolation error')
    return Ok(record)


@noexcept
def control_distance(first: ControlField, second: ControlField) -> float:
    """||first - second||_L2 on the mixed rule of the common mesh."""
    points = first.mesh.mixed_points(4, 7)
    diff = first.evaluate_at(points) - second.evaluate_at(points)
    return math.sqrt(points.integrate(diff * diff))


def eoc(e_prev: float, e: float, h_prev: float, h: float) -> Optional[float]:
    """log(e_prev / e) / log(h_prev / h), or None where undefined."""
    if not (e_prev > 0.0 and e > 0.0 and h_prev > h > 0.0):
        return None
    return math.log(e_prev / e) / math.log(h_prev / h)


@dataclass(frozen=True)
class EocRow:
    h: float
    record: Optional[ErrorRecord]

    @property
    def status(self) -> str:
        return 'ok' if self.record is not None else 'not_converged'


@dataclass
class EocTable:
    """Errors per mesh, ordered by decreasing h."""

    rows: list[EocRow] = field(default_factory=list)
    caveat: str = 'energy errors are the interpolant surrogates ||I_h u - u_h||_s'

    def add(self, h: float, record: Optional[ErrorRecord]) -> None:
        if self.rows and not h < self.rows[-1].h:
            raise ParameterError(f'mesh sizes must decrease, got {h} after {self.rows[-1].h}')
        self.rows.append(EocRow(h, record))

    def rates(self, column: str) -> list[Optional[float]]:
        """EOC of `column` per row; None in the first row and next to unconverged rows."""
        rates: list[Optional[float]] = [None]
        for prev, row in zip(self.rows, self.rows[1:]):
            if prev.record is None or row.record is None:
                rates.append(None)
            else:
                rates.append(
                    eoc(getattr(prev.record, column), getattr(row.record, column), prev.h, row.h)
                )
        return rates

    def to_csv(self) -> str:
        rates = [self.rates(column) for column in ERROR_COLUMNS]
        lines = [CSV_HEADER]
        for k, row in enumerate(self.rows):
            errors = (
                [f'{e:.10e}' for e in row.record.errors()]
                if row.record is not None
                else [''] * len(ERROR_COLUMNS)
            )
            eocs = ['' if r[k] is None else f'{r[k]:.10e}' for r in rates]
            lines.append(','.join([f'{row.h:.10e}'] + errors + eocs + [row.status]))
        return '\n'.join(lines) + '\n'

    @returns_result(expects=io_expects)
    def write(self, path: Path) -> Result[Path]:
        Path(path).write_text(self.to_csv())
        return Ok(Path(path))


@noexcept
def gnuplot_script(csv_name: str, title: str) -> str:
    """Log-log plot of every error column against h with a slope-one reference."""
    panels = []
    for k, name in enumerate(ERROR_COLUMNS):
        column = k + 2
        panels.append(
            f"set title '{name}'\n"
            f"plot '{csv_name}' using 1:{column} with linespoints title '{name}', "
            f"'{csv_name}' using 1:1 with lines dashtype 2 title 'h'"
        )
    return (
        'set datafile separator ","\n'
        'set terminal pngcairo size 1500,900\n'
        f"set output '{Path(csv_name).stem}.png'\n"
        'set logscale xy\n'
        'set key top left\n'
        'set xlabel "h"\n'
        f'set multiplot layout 2,3 title "{title}"\n'
        + '\n'.join(panels)
        + '\nunset multiplot\n'
    )


@dataclass(frozen=True)
class StudySettings:
    """Everything a convergence study depends on besides example and order."""

    scheme: Scheme = 'fully_discrete'
    assembly: AssemblyConfig = AssemblyConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    threads: int = 1


def _study_job(
    example: int, s: float, mesh: TriMesh, settings: StudySettings
) -> Optional[ErrorRecord]:
    case = build_case(example, s).unwrap_or_raise()
    params = FracParams(s).unwrap_or_raise()
    with log_stage(logger, f'example {example}, s={s}, {mesh.n_triangles} triangles'):
        K = assemble_stiffness(mesh, params, settings.assembly).unwrap_or_raise()
        data = make_problem(mesh, K, case.f, case.u_des, case.lam, case.a, case.b)
        cfg = replace(settings.optimizer, scheme=settings.scheme)
        result = optimize(data.unwrap_or_raise(), cfg).unwrap_or_raise()
    match error_norms(result, case, K):
        case Ok(record):
            return record
        case Err(ConvergenceError() as e):
            logger.warning(f'example {example}, s={s}, h={mesh.h_max:.3e}: {e}')
            return None
        case Err(e):
            raise e


@returns_result(expects=numerical_expects)
def run_convergence_study(
    example: int,
    s_list: list[float],
    levels: int,
    settings: StudySettings = StudySettings(),
) -> Result[dict[float, EocTable]]:
    """Error tables over `levels` nested meshes, one table per order.

    Rows are independent jobs on a thread pool of `settings.threads` workers
    and are merged by (s, level), so the tables do not depend on the pool size.
    A run that does not converge yields a flagged row.

    Returns:
        Result[dict[float, EocTable]]: Tables keyed by s.
    """
    if levels < 3:
        raise ParameterError(f'a convergence study needs at least 3 levels, got {levels}')
    for s in s_list:
        build_case(example, s).unwrap_or_raise()
    meshes = mesh_family(levels)
    jobs = [(s, level) for s in s_list for level in range(levels)]
    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        futures = {
            (s, level): pool.submit(_study_job, example, s, meshes[level], settings)
            for s, level in jobs
        }
        records = {key: future.result() for key, future in futures.items()}
    tables = {}
    for s in s_list:
        table = EocTable()
        for level in range(levels):
            table.add(meshes[level].h_max, records[(s, level)])
        tables[s] = table
    return Ok(tables)


@dataclass(frozen=True)
class BallStudy:
    """Plain solver on the ball: (-Delta)^s u = 1, q = 0.

    Attributes:
        s (float): Fractional order.
        c_s (float): Exact value at the origin.
        h (list[float]): Mesh sizes.
        errors_L2 (list[float]): L2 errors of u_h.
        origin_values (list[float]): u_h at the origin.
    """

    s: float
    c_s: float
    h: list[float]
    errors_L2: list[float]
    origin_values: list[float]

    @property
    def rates(self) -> list[Optional[float]]:
        return [None] + [
            eoc(self.errors_L2[k - 1], self.errors_L2[k], self.h[k - 1], self.h[k])
            for k in range(1, len(self.h))
        ]

    @property
    def origin_error(self) -> float:
        """Relative error of the origin value on the finest mesh."""
        return abs(self.origin_values[-1] - self.c_s) / self.c_s


def _origin_index(mesh: TriMesh) -> int:
    index = int(np.argmin(np.linalg.norm(mesh.vertices, axis=1)))
    assert np.linalg.norm(mesh.vertices[index]) < 1e-14, 'origin is not a mesh vertex'
    return index


@returns_result(expects=numerical_expects)
def run_ball_study(
    s: float, levels: int, cfg: AssemblyConfig = AssemblyConfig()
) -> Result[BallStudy]:
    """L2 errors and origin values of the ball problem on `mesh_family(levels)`."""
    params = FracParams(s).unwrap_or_raise()
    case = build_case(1, s).unwrap_or_raise()
    h, errors, origin = [], [], []
    for mesh in mesh_family(levels):
        with log_stage(logger, f'ball s={s}, {mesh.n_triangles} triangles'):
            K = assemble_stiffness(mesh, params, cfg).unwrap_or_raise()
            system = PdeSystem(K, mesh, ControlField.constant(mesh, 0.0, 0.0, 1.0))
            u = solve_state(system, 1.0).unwrap_or_raise()
        points = mesh.mixed_points(4, 7)
        diff = u.at(points) - case.exact_u(points.coordinates)
        h.append(mesh.h_max)
        errors.append(math.sqrt(points.integrate(diff * diff)))
        origin.append(float(u.nodal()[_origin_index(mesh)]))
    return Ok(BallStudy(float(s), case.c_s, h, errors, origin))


@noexcept
def check_ball_identity(mesh: TriMesh, K: StiffnessMatrix) -> float:
    """Relative defect |I_h u^T K I_h u - F . I_h u| / |F . I_h u| for f = 1.

    I_h u interpolates the ball solution, which satisfies (-Delta)^s u = 1.
    """
    u = interpolate(mesh, build_case(1, K.params.s).unwrap().exact_u)
    F = assemble_load(mesh, 1.0)
    reference = float(F @ u)
    return abs(float(u @ (K @ u)) - reference) / abs(reference)

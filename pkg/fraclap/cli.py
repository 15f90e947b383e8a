# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from pathlib import Path
from typing import Optional, Sequence
import argparse
import logging
import sys

from drresult import Err, Ok, Result, log_panic, returns_result

from fraclap.config import MODES, RunConfig, load_config
from fraclap.errors import ConvergenceError, MeshError, io_expects
from fraclap.fields import ControlField, write_field
from fraclap.fracfem import FracParams, StiffnessMatrix, export_triplets
from fraclap.logging import configure, log_stage
from fraclap.mesh import TriMesh, read_mesh, write_mesh
from fraclap.optctl import OptimizeResult, make_problem, optimize, p0_project
from fraclap.selfcheck import run_suites
from fraclap.solver import PdeSystem, solve_state, stability_ratio
from fraclap.stiffness import assemble_stiffness
from fraclap.verify import (
    ERROR_COLUMNS,
    StudySettings,
    build_case,
    error_norms,
    gnuplot_script,
    mesh_family,
    run_convergence_study,
)

"""
Command line entry point `fraclap`.

Exit codes: 0 success, 1 failed selfcheck suite, 2 invalid configuration,
3 non-convergence or numerical failure, 4 I/O failure.

Functions:
    - build_parser: The argument parser.
    - run: Execute a validated `RunConfig`.
    - main: Parse, configure logging and run.
"""

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_FLAGS = (
    ('--mode', 'mode', 'one of ' + ', '.join(MODES)),
    ('--example', 'example', 'manufactured example 1, 2 or 3'),
    ('--s', 's', 'comma separated fractional orders'),
    ('--scheme', 'scheme', 'fully_discrete or semidiscrete'),
    ('--levels', 'levels', 'refinements of the base disc mesh'),
    ('--out', 'out', 'output root directory'),
    ('--tol', 'tol', 'Newton residual tolerance'),
    ('--quad-singular', 'quad_singular', 'Gauss points per direction on singular pairs'),
    ('--quad-near', 'quad_near', 'rule degree on near pairs'),
    ('--quad-far', 'quad_far', 'rule degree on far pairs'),
    ('--n-angles', 'n_angles', 'angular nodes of the disc complement weight'),
    ('--complement', 'complement', 'complement domain, polygon or disc'),
    ('--seed', 'seed', 'seed of the selfcheck data'),
    ('--threads', 'threads', 'workers of the assembly and study pools'),
    ('--mesh', 'mesh', 'mesh file written by an earlier run'),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='fraclap',
        description='Bilinear optimal control of the integral fractional Laplacian.',
    )
    parser.add_argument('--config', type=Path, help='key = value config file')
    parser.add_argument('-v', '--verbose', action='store_true', help='log at DEBUG level')
    for flag, key, help_text in _FLAGS:
        parser.add_argument(flag, dest=key, default=None, help=help_text)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    return {key: value for _, key, _ in _FLAGS if (value := getattr(args, key)) is not None}


@returns_result(expects=io_expects)
def _write(path: Path, text: str) -> Result[Path]:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return Ok(path)


@returns_result(expects=io_expects)
def _run_mesh(config: RunConfig) -> Result[TriMesh]:
    if config.mesh is None:
        return Ok(mesh_family(config.levels)[-1])
    match read_mesh(config.mesh):
        case Ok(mesh):
            logger.info(f'read {mesh.n_triangles} triangles from {config.mesh}')
            return Ok(mesh)
        case Err(ValueError() as e):
            raise MeshError(f'{config.mesh}: malformed mesh file: {e}')
        case Err(e):
            raise e


@returns_result(expects=io_expects)
def _write_discretization(out: Path, mesh: TriMesh, K: StiffnessMatrix) -> Result[Path]:
    write_mesh(mesh, out / 'mesh.txt').unwrap_or_raise()
    return export_triplets(K, out / 'stiffness.txt')


@returns_result(expects=io_expects)
def _solve_state(config: RunConfig, s: float) -> Result[int]:
    case = build_case(config.example, s).unwrap_or_raise()
    mesh = _run_mesh(config).unwrap_or_raise()
    K = assemble_stiffness(
        mesh, FracParams(s).unwrap_or_raise(), config.assembly_config()
    ).unwrap_or_raise()
    q = ControlField.create(mesh, p0_project(mesh, case.exact_q), case.a, case.b)
    system = PdeSystem(K, mesh, q.unwrap_or_raise())
    points = mesh.mixed_points(4, 7)
    u = solve_state(system, case.f, points).unwrap_or_raise()
    diff = u.at(points) - case.exact_u(points.coordinates)
    ratio = stability_ratio(K, u, system.load(case.f, points)).unwrap_or_raise()
    out = config.output_dir(s)
    _write(
        out / 'report.txt',
        f'mode: solve_state\nexample: {config.example}\ns: {s:g}\n'
        f'triangles: {mesh.n_triangles}\nh: {mesh.h_max:.10e}\n'
        f'state L2 error: {float(points.integrate(diff * diff)) ** 0.5:.10e}\n'
        f'stability ratio: {ratio:.10e}\n',
    ).unwrap_or_raise()
    write_field(out / 'state.txt', u).unwrap_or_raise()
    _write_discretization(out, mesh, K).unwrap_or_raise()
    return Ok(EXIT_OK)


def _optimize_report(result: OptimizeResult, config: RunConfig, s: float, errors: str) -> str:
    return (
        f'mode: optimize\nexample: {config.example}\ns: {s:g}\n'
        f'triangles: {result.q_opt.mesh.n_triangles}\n{result.report()}{errors}'
    )


@returns_result(expects=io_expects)
def _optimize(config: RunConfig, s: float) -> Result[int]:
    case = build_case(config.example, s).unwrap_or_raise()
    mesh = _run_mesh(config).unwrap_or_raise()
    params = FracParams(s).unwrap_or_raise()
    K = assemble_stiffness(mesh, params, config.assembly_config()).unwrap_or_raise()
    data = make_problem(mesh, K, case.f, case.u_des, case.lam, case.a, case.b).unwrap_or_raise()
    result = optimize(data, config.optimizer_config()).unwrap_or_raise()
    match error_norms(result, case, K):
        case Ok(record):
            errors = ''.join(
                f'{name}: {value:.10e}\n' for name, value in zip(ERROR_COLUMNS, record.errors())
            )
            errors += f'interpolation L2 error: {record.interpolation_L2:.10e}\n'
            errors += 'note: e_u_s and e_p_s are the interpolant surrogates ||I_h u - u_h||_s\n'
        case Err(ConvergenceError()):
            errors = ''
        case Err(e):
            raise e
    out = config.output_dir(s)
    _write(out / 'report.txt', _optimize_report(result, config, s, errors)).unwrap_or_raise()
    write_field(out / 'control.txt', result.q_opt).unwrap_or_raise()
    write_field(out / 'state.txt', result.u_opt).unwrap_or_raise()
    write_field(out / 'adjoint.txt', result.p_opt).unwrap_or_raise()
    _write_discretization(out, mesh, K).unwrap_or_raise()
    return Ok(EXIT_OK if result.converged else EXIT_NUMERICAL)


@returns_result(expects=io_expects)
def _study(config: RunConfig) -> Result[int]:
    settings = StudySettings(
        scheme=config.optimizer_config().scheme,
        assembly=config.assembly_config(),
        optimizer=config.optimizer_config(),
        threads=config.threads,
    )
    tables = run_convergence_study(
        config.example, list(config.s), config.levels, settings
    ).unwrap_or_raise()
    status = EXIT_OK
    meshes = mesh_family(config.levels)
    for s, table in tables.items():
        out = config.output_dir(s)
        _write(out / 'study.csv', table.to_csv()).unwrap_or_raise()
        title = f'example {config.example}, s = {s:g}, {config.scheme}'
        _write(out / 'study.gp', gnuplot_script('study.csv', title)).unwrap_or_raise()
        for level, mesh in enumerate(meshes):
            write_mesh(mesh, out / f'mesh_{level}.txt').unwrap_or_raise()
        if any(row.record is None for row in table.rows):
            status = EXIT_NUMERICAL
    return Ok(status)


@returns_result(expects=io_expects)
def _selfcheck(config: RunConfig) -> Result[int]:
    outcomes = run_suites(config.seed)
    summary = ''.join(f'{outcome}\n' for outcome in outcomes)
    passed = sum(outcome.passed for outcome in outcomes)
    summary += f'{passed}/{len(outcomes)} suites passed\n'
    print(summary, end='')
    _write(config.output_dir() / 'summary.txt', summary).unwrap_or_raise()
    return Ok(EXIT_OK if passed == len(outcomes) else EXIT_CHECK_FAILED)


def _exit_code(result: Result[int]) -> int:
    match result:
        case Ok(code):
            return code
        case Err(OSError() as e):
            logger.error(f'I/O failure: {e}')
            return EXIT_IO
        case Err(e):
            logger.error(f'{type(e).__name__}: {e}')
            return EXIT_NUMERICAL


def run(config: RunConfig) -> int:
    """Execute all runs of `config` and return the worst exit code."""
    match config.mode:
        case 'selfcheck':
            return _exit_code(_selfcheck(config))
        case 'study':
            with log_stage(logger, f'study of example {config.example}'):
                return _exit_code(_study(config))
        case 'solve_state':
            runs = _solve_state
        case _:
            runs = _optimize
    codes = []
    for s in config.s:
        with log_stage(logger, f'{config.mode} example {config.example}, s={s:g}'):
            codes.append(_exit_code(runs(config, s)))
    return max(codes)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure(logging.DEBUG if args.verbose else logging.INFO)
    match load_config(args.config, _overrides(args)):
        case Ok(config):
            pass
        case Err(e):
            print(f'fraclap: configuration error: {e}', file=sys.stderr)
            return EXIT_CONFIG
    with log_panic(logger):
        return run(config)

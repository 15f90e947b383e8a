# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from fraclap.errors import CaseError, ConvergenceError, ParameterError
from fraclap.fields import AdjointField, ControlField, StateField, interpolate
from fraclap.fracfem import FracParams
from fraclap.optctl import OptimizeResult, OptimizerConfig, make_problem, optimize, p0_project
from fraclap.stiffness import assemble_stiffness
from fraclap.verify import (
    CSV_HEADER,
    ERROR_COLUMNS,
    EocTable,
    ErrorRecord,
    StudySettings,
    ball_constant,
    build_case,
    check_ball_identity,
    control_distance,
    eoc,
    error_norms,
    gnuplot_script,
    mesh_family,
    run_ball_study,
    run_convergence_study,
)

import math

import numpy as np
import pytest


def record(h: float, scale: float = 1.0) -> ErrorRecord:
    return ErrorRecord(h, scale * h, scale * h**2, scale * h, scale * h**2, scale * h, 0.0, False)


def exact_result(mesh, case, converged: bool = True) -> OptimizeResult:
    u = StateField(mesh, interpolate(mesh, case.exact_u))
    p = AdjointField(mesh, interpolate(mesh, case.exact_p))
    q = ControlField(mesh, p0_project(mesh, case.exact_q), case.a, case.b)
    return OptimizeResult(q, u, p, [0.0], [0.0], [], converged, 'fully_discrete', case.lam)


def test_ball_constant_at_one_half():
    assert ball_constant(0.5) == pytest.approx(2.0 / math.pi, rel=1e-14)


def test_first_example():
    case = build_case(1, 0.5).unwrap()
    assert (case.a, case.b) == (0.0, 0.5)
    assert case.peak == pytest.approx(4.0 / math.pi**2, rel=1e-14)
    origin = np.zeros((1, 2))
    assert case.exact_u(origin)[0] == pytest.approx(case.c_s, rel=1e-15)
    assert case.exact_q(origin)[0] == pytest.approx(case.peak, rel=1e-15)
    assert case.exact_u(np.array([[1.0, 0.0]]))[0] == 0.0


def test_data_satisfy_state_equation_residual():
    case = build_case(2, 0.3).unwrap()
    x = np.array([[0.1, 0.2], [0.5, -0.5], [0.0, 0.9]])
    assert np.allclose(case.f(x) - 1.0, case.exact_q(x) * case.exact_u(x), rtol=0.0, atol=1e-14)
    assert np.allclose(
        case.exact_u(x) - case.u_des(x), 1.0 + case.exact_q(x) * case.exact_p(x), atol=1e-14
    )


def test_third_example_lower_bound_binds_away_from_origin():
    case = build_case(3, 0.5).unwrap()
    assert case.a == pytest.approx(0.95 * case.peak)
    assert case.b == 1.5
    assert case.exact_q(np.array([[0.8, 0.0]]))[0] == case.a
    assert case.exact_q(np.zeros((1, 2)))[0] == pytest.approx(case.peak)


def test_second_example_bounds():
    case = build_case(2, 0.25).unwrap()
    assert case.a == pytest.approx(0.001 * case.peak)
    assert case.b == 1.5


@pytest.mark.parametrize(
    'example,s,lam,error',
    [
        (4, 0.5, 1.0, CaseError),
        (0, 0.5, 1.0, CaseError),
        (1, 1.0, 1.0, ParameterError),
        (1, 0.5, 0.0, ParameterError),
    ],
)
def test_build_case_rejects(example, s, lam, error):
    result = build_case(example, s, lam)
    assert result.is_err()
    assert isinstance(result.unwrap_err(), error)


def test_mesh_family_is_nested_and_shrinking():
    family = mesh_family(2)
    assert [mesh.n_triangles for mesh in family] == [192, 768]
    assert family[1].h_max < family[0].h_max


def test_eoc():
    assert eoc(1.0, 0.25, 1.0, 0.5) == pytest.approx(2.0)
    assert eoc(0.0, 0.25, 1.0, 0.5) is None
    assert eoc(1.0, 0.25, 0.5, 0.5) is None


def test_table_rates():
    table = EocTable()
    for h in (0.4, 0.2, 0.1):
        table.add(h, record(h))
    rates = table.rates('e_u_L2')
    assert rates[0] is None
    assert rates[1] == pytest.approx(2.0)
    assert rates[2] == pytest.approx(2.0)
    assert table.rates('e_q_L2')[2] == pytest.approx(1.0)


def test_table_requires_decreasing_h():
    table = EocTable()
    table.add(0.2, record(0.2))
    with pytest.raises(ParameterError):
        table.add(0.2, record(0.2))


def test_table_csv_flags_unconverged_rows():
    table = EocTable()
    table.add(0.4, record(0.4))
    table.add(0.2, None)
    table.add(0.1, record(0.1))
    lines = table.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    assert CSV_HEADER.split(',')[1:6] == list(ERROR_COLUMNS)
    assert CSV_HEADER.split(',')[6] == 'eoc_u_s'
    rows = [line.split(',') for line in lines[1:]]
    assert all(len(row) == len(CSV_HEADER.split(',')) for row in rows)
    assert [row[-1] for row in rows] == ['ok', 'not_converged', 'ok']
    assert rows[1][1:11] == [''] * 10
    assert rows[2][6:11] == [''] * 5
    assert float(rows[0][0]) == pytest.approx(0.4)


def test_table_write(tmp_path):
    table = EocTable()
    table.add(0.5, record(0.5))
    path = table.write(tmp_path / 'study.csv').unwrap()
    assert path.read_text() == table.to_csv()


def test_gnuplot_script_plots_every_error_column():
    script = gnuplot_script('study.csv', 'example 1')
    for column in range(2, 2 + len(ERROR_COLUMNS)):
        assert f"'study.csv' using 1:{column} with linespoints" in script
    assert "set output 'study.png'" in script
    assert 'set logscale xy' in script
    assert script.endswith('unset multiplot\n')


def test_error_norms_rejects_unconverged_result(disc_mesh, stiffness):
    case = build_case(1, 0.5).unwrap()
    result = error_norms(exact_result(disc_mesh, case, converged=False), case, stiffness)
    assert result.is_err()
    assert isinstance(result.unwrap_err(), ConvergenceError)


def test_error_norms_of_interpolant(disc_mesh, stiffness):
    case = build_case(1, 0.5).unwrap()
    errors = error_norms(exact_result(disc_mesh, case), case, stiffness).unwrap()
    assert errors.e_u_s == 0.0
    assert errors.e_p_s == 0.0
    assert errors.e_u_L2 == pytest.approx(errors.interpolation_L2, rel=1e-12)
    assert errors.e_p_L2 == pytest.approx(errors.e_u_L2, rel=1e-12)
    assert errors.e_q_L2 > 0.0
    assert not errors.saturated
    assert errors.h == disc_mesh.h_max


def test_control_distance(disc_mesh):
    first = ControlField.constant(disc_mesh, 0.2, 0.0, 1.0)
    second = ControlField.constant(disc_mesh, 0.5, 0.0, 1.0)
    area = float(disc_mesh.areas.sum())
    assert control_distance(first, first) == 0.0
    assert control_distance(first, second) == pytest.approx(0.3 * math.sqrt(area), rel=1e-12)


def test_study_needs_three_levels():
    result = run_convergence_study(1, [0.5], 2)
    assert result.is_err()
    assert isinstance(result.unwrap_err(), ParameterError)


def test_study_rejects_unknown_example():
    result = run_convergence_study(5, [0.5], 3)
    assert result.is_err()
    assert isinstance(result.unwrap_err(), CaseError)


@pytest.mark.slow
@pytest.mark.parametrize('s', [0.3, 0.5, 0.7])
def test_ball_study_converges(s):
    study = run_ball_study(s, 4).unwrap()
    assert len(study.h) == 4
    assert all(b < a for a, b in zip(study.errors_L2, study.errors_L2[1:]))
    assert study.rates[-1] >= 0.9 * min(1.0, s + 0.5)
    assert study.origin_error < 0.02


@pytest.mark.slow
def test_ball_identity_on_refined_mesh():
    mesh = mesh_family(2)[-1]
    K = assemble_stiffness(mesh, FracParams(0.5).unwrap()).unwrap()
    assert check_ball_identity(mesh, K) < 0.05


@pytest.mark.slow
def test_control_study_does_not_depend_on_thread_count():
    tables = [
        run_convergence_study(1, [0.5], 3, StudySettings(threads=threads)).unwrap()[0.5]
        for threads in (1, 3)
    ]
    assert tables[0].to_csv() == tables[1].to_csv()
    assert [row.status for row in tables[0].rows] == ['ok'] * 3
    rates = tables[0].rates('e_q_L2')
    assert rates[-1] > 0.5


@pytest.mark.slow
@pytest.mark.parametrize('s', [0.3, 0.5, 0.7])
def test_third_example_control_converges_linearly(s):
    table = run_convergence_study(3, [s], 4, StudySettings(threads=4)).unwrap()[s]
    assert [row.status for row in table.rows] == ['ok'] * 4
    assert 0.85 <= table.rates('e_q_L2')[-1] <= 1.15


@pytest.mark.slow
@pytest.mark.parametrize('s,low,high', [(0.1, 0.55, 0.85), (0.7, 0.85, 1.15)])
def test_first_example_control_rate_follows_regularity(s, low, high):
    table = run_convergence_study(1, [s], 4, StudySettings(threads=4)).unwrap()[s]
    assert [row.status for row in table.rows] == ['ok'] * 4
    assert low <= table.rates('e_q_L2')[-1] <= high


@pytest.mark.slow
def test_schemes_approach_the_same_control():
    case = build_case(1, 0.5).unwrap()
    distances = []
    for mesh in mesh_family(3):
        K = assemble_stiffness(mesh, FracParams(0.5).unwrap()).unwrap()
        data = make_problem(mesh, K, case.f, case.u_des, case.lam, case.a, case.b).unwrap()
        full, semi = (
            optimize(data, OptimizerConfig(scheme=scheme)).unwrap()
            for scheme in ('fully_discrete', 'semidiscrete')
        )
        assert full.converged and semi.converged
        distances.append(control_distance(full.q_opt, semi.q_opt))
    assert all(a >= 1.5 * b for a, b in zip(distances, distances[1:])), distances

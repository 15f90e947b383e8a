# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from drresult import Ok, Result, returns_result

from fraclap import selfcheck
from fraclap.errors import FracLapError
from fraclap.selfcheck import (
    PAIRS,
    SUITES,
    CheckFailed,
    SuiteOutcome,
    check_adjoint,
    check_curvature,
    check_gradient,
    run_suites,
)


def test_all_suites_pass():
    outcomes = run_suites(0)
    assert [outcome.name for outcome in outcomes] == list(SUITES)
    assert all(outcome.passed for outcome in outcomes), [str(o) for o in outcomes]


def test_suites_accept_other_seeds():
    assert check_adjoint(5).is_ok()


def test_derivative_suites_use_every_direction():
    assert PAIRS == 5
    for suite in (check_gradient, check_curvature):
        assert suite(1).unwrap().startswith(f'{PAIRS} directions')


def test_wrong_curvature_is_caught(monkeypatch):
    exact = selfcheck.curvature_form

    def skewed(q, w, data):
        return Ok(1.01 * exact(q, w, data).unwrap())

    monkeypatch.setattr(selfcheck, 'curvature_form', skewed)
    result = check_curvature(0)
    assert isinstance(result.unwrap_err(), CheckFailed)
    assert 'curvature' in str(result.unwrap_err())


def test_outcome_text():
    assert str(SuiteOutcome('mesh', True, 'valid')) == 'PASS mesh: valid'
    assert str(SuiteOutcome('mesh', False, 'overlap')) == 'FAIL mesh: overlap'


def test_failing_suite_is_collected(monkeypatch):
    @returns_result(expects=[FracLapError])
    def broken(seed: int) -> Result[str]:
        raise CheckFailed(f'seed {seed} rejected')

    monkeypatch.setitem(SUITES, 'broken', broken)
    outcomes = run_suites(3)
    assert outcomes[-1] == SuiteOutcome('broken', False, 'seed 3 rejected')
    assert all(outcome.passed for outcome in outcomes[:-1])

# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from pathlib import Path

from fraclap.config import RunConfig, load_config, parse_config_text
from fraclap.errors import ConfigError

import pytest


def test_defaults_are_valid(monkeypatch):
    monkeypatch.delenv('FRACLAP_THREADS', raising=False)
    config = load_config().unwrap()
    assert config == RunConfig()
    assert config.mode == 'optimize'
    assert config.s == (0.5,)


def test_parse_skips_comments_and_blank_lines():
    text = '# run\n\nmode = study   # trailing\nquad-near=5\n'
    assert parse_config_text(text).unwrap() == {'mode': 'study', 'quad_near': '5'}


@pytest.mark.parametrize(
    'text,fragment',
    [
        ('mode study\n', 'expected key = value'),
        ('colour = red\n', 'unknown key'),
        ('tol = 1e-8\ntol = 1e-9\n', 'duplicate key'),
    ],
)
def test_parse_rejects(text, fragment):
    result = parse_config_text(text)
    assert result.is_err()
    assert isinstance(result.unwrap_err(), ConfigError)
    assert fragment in str(result.unwrap_err())


def test_file_values_are_converted(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('mode = study\ns = 0.25, 0.75\nlevels = 3\nout = results\ntol = 1e-8\n')
    config = load_config(path).unwrap()
    assert config.mode == 'study'
    assert config.s == (0.25, 0.75)
    assert config.levels == 3
    assert config.out == Path('results')
    assert config.tol == 1e-8


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('example = 2\nscheme = semidiscrete\n')
    config = load_config(path, {'example': '3', 'n-angles': '128'}).unwrap()
    assert config.example == 3
    assert config.scheme == 'semidiscrete'
    assert config.n_angles == 128


@pytest.mark.parametrize(
    'overrides',
    [
        {'mode': 'plot'},
        {'scheme': 'newton'},
        {'complement': 'square'},
        {'example': '4'},
        {'s': '1.0'},
        {'s': ''},
        {'levels': '0'},
        {'mode': 'study', 'levels': '2'},
        {'tol': '0'},
        {'quad_singular': '0'},
        {'levels': 'many'},
        {'threads': '0'},
        {'mode': 'study', 'mesh': 'mesh.txt'},
        {'mode': 'selfcheck', 'mesh': 'mesh.txt'},
        {'unknown': '1'},
    ],
)
def test_invalid_settings(overrides):
    result = load_config(overrides=overrides)
    assert result.is_err()
    assert isinstance(result.unwrap_err(), ConfigError)


def test_missing_file_is_os_error(tmp_path):
    result = load_config(tmp_path / 'missing.cfg')
    assert result.is_err()
    assert isinstance(result.unwrap_err(), OSError)


def test_output_directories():
    config = RunConfig(example=2, out=Path('out'))
    assert config.output_dir() == Path('out/optimize')
    assert config.output_dir(0.25) == Path('out/optimize/2/0.25')


def test_derived_settings(monkeypatch):
    monkeypatch.setenv('FRACLAP_THREADS', '3')
    config = load_config(
        overrides={
            'quad_singular': '6',
            'complement': 'disc',
            'tol': '1e-7',
            'scheme': 'semidiscrete',
        }
    ).unwrap()
    assembly = config.assembly_config()
    assert assembly.o_singular == 6
    assert assembly.complement == 'disc'
    assert assembly.threads == 3
    optimizer = config.optimizer_config()
    assert optimizer.tol_residual == 1e-7
    assert optimizer.scheme == 'semidiscrete'


def test_threads_flag_wins_over_environment(monkeypatch):
    monkeypatch.setenv('FRACLAP_THREADS', '3')
    assert load_config(overrides={'threads': '2'}).unwrap().assembly_config().threads == 2


@pytest.mark.parametrize('value', ['four', '0', '-2', '1.5', ''])
def test_invalid_threads_environment(monkeypatch, value):
    monkeypatch.setenv('FRACLAP_THREADS', value)
    result = load_config()
    assert result.is_err()
    assert isinstance(result.unwrap_err(), ConfigError)
    assert 'FRACLAP_THREADS' in str(result.unwrap_err())
    assert repr(value) in str(result.unwrap_err())


def test_mesh_file_setting():
    assert load_config().unwrap().mesh is None
    config = load_config(overrides={'mode': 'solve_state', 'mesh': 'runs/mesh.txt'}).unwrap()
    assert config.mesh == Path('runs/mesh.txt')

# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Literal, Optional
import logging
import os

from drresult import Err, Ok, Result, returns_result

from fraclap.errors import ConfigError, config_expects
from fraclap.fracfem import AssemblyConfig
from fraclap.optctl import OptimizerConfig

"""
Run configuration of the command line.

A run is described by flat `key = value` lines; command line flags override
the file, which overrides the defaults of `RunConfig`. The worker count
defaults to `FRACLAP_THREADS`.

Classes:
    - RunConfig: All settings of one invocation.

Functions:
    - parse_config_text: Split a config file into raw key/value pairs.
    - threads_from_environment: Worker count from `FRACLAP_THREADS`.
    - load_config: Defaults, file and overrides merged into a validated `RunConfig`.
"""

logger = logging.getLogger(__name__)

type Mode = Literal['solve_state', 'optimize', 'study', 'selfcheck']

MODES = ('solve_state', 'optimize', 'study', 'selfcheck')
SCHEMES = ('fully_discrete', 'semidiscrete')
COMPLEMENTS = ('polygon', 'disc')
THREADS_VARIABLE = 'FRACLAP_THREADS'


@dataclass(frozen=True)
class RunConfig:
    """Settings of one command line run.

    Attributes:
        mode (Mode): `solve_state`, `optimize`, `study` or `selfcheck`.
        example (int): Manufactured example 1, 2 or 3.
        s (tuple[float, ...]): Fractional orders, one run or table each.
        scheme (str): `fully_discrete` or `semidiscrete`.
        levels (int): Refinements of the base disc mesh; single runs use the
            finest mesh, studies all of them.
        out (Path): Root of the output tree `out/<mode>/<example>/<s>/`.
        tol (float): Newton residual tolerance.
        quad_singular (int): Gauss points per direction on singular pairs.
        quad_near (int): Rule degree on near pairs.
        quad_far (int): Rule degree on far pairs.
        n_angles (int): Angular nodes of the disc complement weight.
        complement (str): `polygon` or `disc`.
        seed (int): Seed of the random selfcheck data.
        threads (int): Workers of the assembly and study pools.
        mesh (Optional[Path]): Mesh file in the `write_mesh` format used by
            `solve_state` and `optimize` instead of the refined disc family.
    """

    mode: Mode = 'optimize'
    example: int = 1
    s: tuple[float, ...] = (0.5,)
    scheme: str = 'fully_discrete'
    levels: int = 4
    out: Path = Path('out')
    tol: float = 1e-9
    quad_singular: int = 5
    quad_near: int = 4
    quad_far: int = 2
    n_angles: int = 64
    complement: str = 'polygon'
    seed: int = 0
    threads: int = 1
    mesh: Optional[Path] = None

    @returns_result(expects=[ConfigError])
    def validate(self) -> Result['RunConfig']:
        if self.mode not in MODES:
            raise ConfigError(f'mode must be one of {", ".join(MODES)}, got {self.mode!r}')
        if self.scheme not in SCHEMES:
            raise ConfigError(f'scheme must be one of {", ".join(SCHEMES)}, got {self.scheme!r}')
        if self.complement not in COMPLEMENTS:
            raise ConfigError(f'complement must be polygon or disc, got {self.complement!r}')
        if self.example not in (1, 2, 3):
            raise ConfigError(f'example must be 1, 2 or 3, got {self.example}')
        if not self.s or not all(0.0 < s < 1.0 for s in self.s):
            raise ConfigError(f's values must lie in (0, 1), got {self.s}')
        if self.levels < 1:
            raise ConfigError(f'levels must be positive, got {self.levels}')
        if self.mode == 'study' and self.levels < 3:
            raise ConfigError(f'a study needs at least 3 levels, got {self.levels}')
        if self.mesh is not None and self.mode not in ('solve_state', 'optimize'):
            raise ConfigError(f'a mesh file applies to solve_state and optimize, not {self.mode}')
        if not self.tol > 0.0:
            raise ConfigError(f'tol must be positive, got {self.tol}')
        if self.threads < 1:
            raise ConfigError(f'threads must be at least 1, got {self.threads}')
        match self.assembly_config().validate():
            case Err(e):
                raise ConfigError(f'invalid quadrature settings: {e}')
        return Ok(self)

    def assembly_config(self) -> AssemblyConfig:
        return AssemblyConfig(
            o_singular=self.quad_singular,
            o_near=self.quad_near,
            o_far=self.quad_far,
            n_angles=self.n_angles,
            complement=self.complement,
            threads=self.threads,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(scheme=self.scheme, tol_residual=self.tol)  # type: ignore[arg-type]

    def output_dir(self, s: Optional[float] = None) -> Path:
        if s is None:
            return self.out / self.mode
        return self.out / self.mode / str(self.example) / f'{s:g}'


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(item) for item in text.split(',') if item.strip())


_PARSERS: dict[str, Callable[[str], Any]] = {
    'mode': str,
    'example': int,
    's': _float_list,
    'scheme': str,
    'levels': int,
    'out': Path,
    'tol': float,
    'quad_singular': int,
    'quad_near': int,
    'quad_far': int,
    'n_angles': int,
    'complement': str,
    'seed': int,
    'threads': int,
    'mesh': Path,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def _normalize_key(key: str) -> str:
    return key.strip().replace('-', '_')


@returns_result(expects=[ConfigError])
def parse_config_text(text: str) -> Result[dict[str, str]]:
    """Parse `key = value` lines; `#` starts a comment.

    Returns:
        Result[dict[str, str]]: Raw values by normalized key, or `Err(ConfigError)`
        for malformed lines, unknown keys or duplicates.
    """
    entries: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'line {number}: expected key = value, got {line!r}')
        key, value = (part.strip() for part in line.split('=', 1))
        key = _normalize_key(key)
        if key not in _PARSERS:
            raise ConfigError(f'line {number}: unknown key {key!r}')
        if key in entries:
            raise ConfigError(f'line {number}: duplicate key {key!r}')
        entries[key] = value
    return Ok(entries)


@returns_result(expects=[ConfigError])
def _convert(raw: dict[str, str]) -> Result[dict[str, Any]]:
    values = {}
    for key, text in raw.items():
        key = _normalize_key(key)
        if key not in _PARSERS:
            raise ConfigError(f'unknown key {key!r}')
        try:
            values[key] = _PARSERS[key](text)
        except ValueError as e:
            raise ConfigError(f'invalid value {text!r} for {key}: {e}')
    return Ok(values)


@returns_result(expects=[ConfigError])
def threads_from_environment() -> Result[int]:
    """Worker count from `FRACLAP_THREADS`, 1 when unset."""
    text = os.environ.get(THREADS_VARIABLE, '1').strip()
    try:
        threads = int(text)
    except ValueError:
        raise ConfigError(f'{THREADS_VARIABLE} must be an integer, got {text!r}')
    if threads < 1:
        raise ConfigError(f'{THREADS_VARIABLE} must be at least 1, got {text!r}')
    return Ok(threads)


@returns_result(expects=config_expects)
def load_config(
    path: Optional[Path] = None, overrides: Optional[dict[str, str]] = None
) -> Result[RunConfig]:
    """Merge defaults, the config file at `path` and `overrides`, later ones winning.

    Args:
        path (Optional[Path]): Config file.
        overrides (Optional[dict[str, str]]): Raw values, typically from flags.

    Returns:
        Result[RunConfig]: The validated configuration, or `Err` with
        `ConfigError` or the `OSError` of reading the file.
    """
    raw = {'threads': str(threads_from_environment().unwrap_or_raise())}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text()).unwrap_or_raise())
        logger.debug(f'read {len(raw)} settings from {path}')
    raw.update(overrides or {})
    config = replace(RunConfig(), **_convert(raw).unwrap_or_raise())
    return config.validate()

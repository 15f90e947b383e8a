# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from typing import List, Type

"""
Exception hierarchy and expected-exception lists for `returns_result`.

Every failure that a caller is meant to handle derives from `FracLapError`.
Anything else raised inside a decorated function becomes a `Panic`.

Constants:
    - numerical_expects: Exceptions expected from assembly, solves and optimization.
    - io_expects: Exceptions expected from reading and writing files.
    - config_expects: Exceptions expected while parsing a run configuration.
"""


class FracLapError(Exception):
    """Base class of all expected errors."""


class MeshError(FracLapError):
    """Invalid mesh construction parameters or a mesh violating its invariants."""


class QuadratureError(FracLapError):
    """Unsupported quadrature degree or invalid assembly configuration."""


class ParameterError(FracLapError):
    """Model parameter out of range, e.g. s outside (0, 1)."""


class DomainError(FracLapError):
    """Point on or outside the boundary of the domain."""


class AssemblyError(FracLapError):
    """Assembled operator is unusable."""


class EmptyMeshError(AssemblyError):
    """Mesh without interior degrees of freedom."""


class DimensionError(FracLapError):
    """Operand sizes do not match."""


class NotSPDError(FracLapError):
    """Cholesky factorization broke down."""


class ConvergenceError(FracLapError):
    """Iterative method or optimizer did not reach its tolerance."""


class ControlError(FracLapError):
    """Invalid control bounds or control layout."""


class CaseError(FracLapError):
    """Unknown manufactured example."""


class ConfigError(FracLapError):
    """Malformed run configuration."""


numerical_expects: List[Type[BaseException]] = [FracLapError]
io_expects: List[Type[BaseException]] = [FracLapError, OSError]
config_expects: List[Type[BaseException]] = [ConfigError, OSError]

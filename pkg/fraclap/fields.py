# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np

from drresult import Ok, Result, noexcept, returns_result

from fraclap.errors import ControlError, DimensionError, io_expects
from fraclap.mesh import ElementPoints, TriMesh
from fraclap.quadrature import QuadratureRule, triangle_quadrature

"""
Discrete fields living on a `TriMesh`.

Classes:
    - StateField: P1 coefficients on the interior vertices, zero on the boundary.
    - AdjointField: Same layout as `StateField`.
    - ControlField: Bounded control, piecewise constant or given at quadrature nodes.
    - LoadVector: Precomputed right-hand side functional on the interior vertices.

Functions:
    - interpolate: Nodal interpolant of a function on the interior vertices.
    - write_field: Export `index value` lines.
"""

type PointFunction = Callable[[np.ndarray], np.ndarray]
"""Vectorized function mapping points of shape (N, 2) to values of shape (N,)."""

type ControlKind = Literal['p0', 'nodal']

NODAL_CONTROL_DEGREE = 4


@dataclass(frozen=True, eq=False)
class StateField:
    """P1 function extended by zero outside the interior vertices.

    Attributes:
        mesh (TriMesh): Carrier mesh.
        values (np.ndarray): Coefficients indexed by `mesh.interior_dof_map`.
    """

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self) -> None:
        assert self.values.shape == (self.mesh.n_interior,)

    def nodal(self) -> np.ndarray:
        """Values at all vertices."""
        return self.mesh.nodal(self.values)

    def at(self, points: ElementPoints) -> np.ndarray:
        return self.mesh.evaluate(self.nodal(), points)


class AdjointField(StateField):
    pass


@dataclass(frozen=True, eq=False)
class LoadVector:
    """Right-hand side entries `F_i = integral of f phi_i` on the interior vertices."""

    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ControlField:
    """Control with box bounds.

    A `p0` control holds one value per triangle. A `nodal` control holds values
    at the points of the degree-4 rule on every triangle, shape (t, m); it is
    the representation of the semidiscrete scheme and may carry the state and
    adjoint it was generated from.

    Attributes:
        mesh (TriMesh): Carrier mesh.
        values (np.ndarray): Control values.
        a (float): Lower bound.
        b (float): Upper bound.
        kind (ControlKind): `p0` or `nodal`.
        generator (Optional[tuple[StateField, AdjointField, float]]): State, adjoint and
            regularization parameter that induce a semidiscrete control.
    """

    mesh: TriMesh
    values: np.ndarray
    a: float
    b: float
    kind: ControlKind = 'p0'
    generator: Optional[tuple[StateField, AdjointField, float]] = field(default=None)

    @staticmethod
    @returns_result(expects=[ControlError])
    def create(
        mesh: TriMesh, values: np.ndarray, a: float, b: float, kind: ControlKind = 'p0'
    ) -> Result['ControlField']:
        """Validated construction.

        Returns:
            Result[ControlField]: The control, or `Err(ControlError)` for bad bounds or layout.
        """
        if not 0.0 <= a < b:
            raise ControlError(f'control bounds must satisfy 0 <= a < b, got a={a}, b={b}')
        values = np.asarray(values, dtype=float)
        expected = control_shape(mesh, kind)
        if values.shape != expected:
            raise ControlError(f'{kind} control needs shape {expected}, got {values.shape}')
        return Ok(ControlField(mesh, values, float(a), float(b), kind))

    @staticmethod
    @noexcept
    def constant(mesh: TriMesh, value: float, a: float, b: float, kind: ControlKind = 'p0'):
        return ControlField(mesh, np.full(control_shape(mesh, kind), float(value)), a, b, kind)

    @property
    def rule(self) -> QuadratureRule:
        """Rule whose points carry the control values in `weighted_mass`-type integrals."""
        return control_rule(self.kind)

    @property
    def weights(self) -> np.ndarray:
        """L2 weights with the shape of `values`."""
        return control_weights(self.mesh, self.kind)

    def with_values(self, values: np.ndarray) -> 'ControlField':
        return ControlField(self.mesh, values, self.a, self.b, self.kind)

    def inner(self, v: np.ndarray, w: np.ndarray) -> float:
        return float(np.sum(self.weights * v * w))

    def norm(self, v: Optional[np.ndarray] = None) -> float:
        v = self.values if v is None else v
        return float(np.sqrt(self.inner(v, v)))

    def at_rule_points(self) -> np.ndarray:
        """Values at the points of `rule` on every triangle, shape (t, m)."""
        if self.kind == 'p0':
            return np.repeat(self.values[:, None], self.rule.size, axis=1)
        return self.values

    def evaluate_at(self, points: ElementPoints) -> np.ndarray:
        """Evaluate the control at arbitrary element points.

        A `p0` control is constant per triangle. A semidiscrete control is
        re-evaluated through the projection formula from its generator.
        """
        if self.kind == 'p0':
            return self.values[points.elements]
        assert self.generator is not None, 'nodal control without generator'
        u, p, lam = self.generator
        return np.clip(u.at(points) * p.at(points) / lam, self.a, self.b)


@noexcept
def control_rule(kind: ControlKind) -> QuadratureRule:
    return triangle_quadrature(2 if kind == 'p0' else NODAL_CONTROL_DEGREE).unwrap()


def control_shape(mesh: TriMesh, kind: ControlKind) -> tuple[int, ...]:
    if kind == 'p0':
        return (mesh.n_triangles,)
    return (mesh.n_triangles, control_rule(kind).size)


def control_weights(mesh: TriMesh, kind: ControlKind) -> np.ndarray:
    if kind == 'p0':
        return mesh.areas
    return np.outer(mesh.areas, control_rule(kind).weights)


@noexcept
def interpolate(mesh: TriMesh, func: PointFunction) -> np.ndarray:
    """Values of `func` at the interior vertices."""
    return np.asarray(func(mesh.vertices[mesh.interior_vertices]), dtype=float)


@returns_result(expects=io_expects)
def write_field(path: Path, field_: StateField | ControlField) -> Result[Path]:
    """Write `vertex_index value` lines, or `element_index value` for a p0 control.

    A state or adjoint is written at all vertices including the zero boundary
    values. A nodal control is written as its element averages.
    """
    match field_:
        case StateField():
            values = field_.nodal()
        case ControlField(kind='p0'):
            values = field_.values
        case ControlField():
            values = (field_.values * field_.rule.weights).sum(axis=1)
        case _:
            raise DimensionError(f'cannot export {type(field_).__name__}')
    Path(path).write_text(''.join(f'{i} {v:.17g}\n' for i, v in enumerate(values)))
    return Ok(Path(path))

# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from typing import Any, Optional
import hashlib
import logging

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from drresult import Err, Ok, Result, returns_result

from fraclap.errors import ConvergenceError, DimensionError, NotSPDError, numerical_expects
from fraclap.fields import AdjointField, ControlField, LoadVector, StateField
from fraclap.fracfem import (
    Load,
    MassMatrix,
    StiffnessMatrix,
    assemble_coupling,
    assemble_load,
    assemble_mass,
    assemble_weighted_mass,
    energy_norm,
)
from fraclap.mesh import ElementPoints, TriMesh

"""
Discrete state, adjoint and linearized equations.

All four equations share the operator K + M(q); `PdeSystem` factors it once
per control and reuses the factorization.

Classes:
    - PdeSystem: Stiffness, mass and control-weighted mass with a cached Cholesky factor.

Functions:
    - spd_solve: Symmetric positive definite solve with a residual guarantee.
    - solve_state, solve_adjoint: The state equation and its adjoint.
    - solve_linearized_state, solve_linearized_adjoint: Derivatives in a control direction.
    - stability_ratio: Discrete stability monitor ||u_h||_s / ||F||.
"""

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-10

type RightHandSide = Load | LoadVector


@returns_result(expects=[LinAlgError])
def _cholesky(matrix: np.ndarray) -> Result[Any]:
    return Ok(cho_factor(matrix, lower=True, check_finite=True))


@returns_result(expects=[DimensionError, NotSPDError, ConvergenceError])
def spd_solve(
    A: np.ndarray | sparse.spmatrix | LinearOperator, b: np.ndarray
) -> Result[np.ndarray]:
    """Solve A x = b for symmetric positive definite A.

    Dense matrices are factored by Cholesky. Sparse matrices and linear
    operators go through conjugate gradients with the same residual contract.

    Args:
        A: The operator.
        b (np.ndarray): Right-hand side.

    Returns:
        Result[np.ndarray]: x with ||A x - b|| <= 1e-10 ||b||, or `Err` with
        `DimensionError`, `NotSPDError` or `ConvergenceError`.
    """
    b = np.asarray(b, dtype=float)
    if A.shape != (len(b), len(b)):
        raise DimensionError(f'operator of shape {A.shape} with right-hand side of length {len(b)}')
    if not np.any(b):
        return Ok(np.zeros_like(b))
    if isinstance(A, np.ndarray):
        match _cholesky(A):
            case Ok(factor):
                return Ok(cho_solve(factor, b))
            case Err(e):
                raise NotSPDError(f'Cholesky factorization failed: {e}')
    x, info = cg(A, b, rtol=1e-13, atol=0.0, maxiter=10 * len(b))
    residual = float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))
    logger.debug(f'spd_solve: cg info={info}, relative residual {residual:.3e}')
    if residual > RESIDUAL_TOLERANCE:
        raise ConvergenceError(f'cg stopped at relative residual {residual:.3e}')
    return Ok(x)


class PdeSystem:
    """Operator K + M(q) of the discrete state equation for one control.

    One optimization run owns its system; `update_control` swaps the control
    and drops the cached factorization when the control values change.
    """

    def __init__(self, K: StiffnessMatrix, mesh: TriMesh, control: ControlField) -> None:
        self.K = K
        self.mesh = mesh
        self.M: MassMatrix = assemble_mass(mesh)
        self.control = control
        self.Mq: MassMatrix = assemble_weighted_mass(mesh, control).unwrap_or_raise()
        self._key: Optional[str] = None
        self._factor: Any = None
        assert K.n == self.M.shape[0], 'stiffness and mass matrix differ in size'

    @property
    def n(self) -> int:
        return self.K.n

    @staticmethod
    def control_key(control: ControlField) -> str:
        digest = hashlib.sha256(np.ascontiguousarray(control.values).tobytes())
        digest.update(control.kind.encode())
        return digest.hexdigest()

    def update_control(self, control: ControlField) -> None:
        if self.control_key(control) != self.control_key(self.control):
            self._key = None
            self._factor = None
        self.control = control
        self.Mq = assemble_weighted_mass(self.mesh, control).unwrap_or_raise()

    @returns_result(expects=[NotSPDError])
    def factor(self) -> Result[Any]:
        """Cholesky factor of K + M(q), cached by the hash of the control values."""
        key = self.control_key(self.control)
        if self._key != key:
            match _cholesky(self.K.matrix + self.Mq.toarray()):
                case Ok(factor):
                    self._factor, self._key = factor, key
                case Err(e):
                    raise NotSPDError(f'K + M(q) is not positive definite: {e}')
        return Ok(self._factor)

    @returns_result(expects=[NotSPDError, DimensionError])
    def solve(self, rhs: np.ndarray) -> Result[np.ndarray]:
        if rhs.shape != (self.n,):
            raise DimensionError(f'right-hand side of shape {rhs.shape} for n={self.n}')
        if not np.any(rhs):
            return Ok(np.zeros(self.n))
        return Ok(cho_solve(self.factor().unwrap_or_raise(), rhs))

    def load(self, f: RightHandSide, points: ElementPoints | None = None) -> np.ndarray:
        if isinstance(f, LoadVector):
            return f.values
        return assemble_load(self.mesh, f, points)


@returns_result(expects=numerical_expects)
def solve_state(
    system: PdeSystem, f: RightHandSide, points: ElementPoints | None = None
) -> Result[StateField]:
    """Solve (K + M(q)) u = F with F_i = integral of f phi_i.

    Args:
        system (PdeSystem): Operator for the current control.
        f (RightHandSide): Callable, constant, vertex values or a precomputed `LoadVector`.
        points (ElementPoints | None): Integration points for callables.

    Returns:
        Result[StateField]: The discrete state.
    """
    u = system.solve(system.load(f, points)).unwrap_or_raise()
    return Ok(StateField(system.mesh, u))


@returns_result(expects=numerical_expects)
def solve_adjoint(
    system: PdeSystem,
    u_h: StateField,
    u_des: RightHandSide,
    points: ElementPoints | None = None,
) -> Result[AdjointField]:
    """Solve (K + M(q)) p = M u_h - U with U_i = integral of u_des phi_i."""
    rhs = system.M @ u_h.values - system.load(u_des, points)
    return Ok(AdjointField(system.mesh, system.solve(rhs).unwrap_or_raise()))


@returns_result(expects=numerical_expects)
def solve_linearized_state(
    system: PdeSystem, u_h: StateField, w: ControlField
) -> Result[StateField]:
    """Solve (K + M(q)) z = -B(w, u_h), the derivative of the state in direction w."""
    rhs = -assemble_coupling(system.mesh, w, u_h).unwrap_or_raise()
    return Ok(StateField(system.mesh, system.solve(rhs).unwrap_or_raise()))


@returns_result(expects=numerical_expects)
def solve_linearized_adjoint(
    system: PdeSystem, dz: StateField, p_h: AdjointField, w: ControlField
) -> Result[AdjointField]:
    """Solve (K + M(q)) dp = M dz - B(w, p_h), the derivative of the adjoint in direction w."""
    rhs = system.M @ dz.values - assemble_coupling(system.mesh, w, p_h).unwrap_or_raise()
    return Ok(AdjointField(system.mesh, system.solve(rhs).unwrap_or_raise()))


@returns_result(expects=numerical_expects)
def stability_ratio(K: StiffnessMatrix, u_h: StateField, F: np.ndarray) -> Result[float]:
    """||u_h||_s / ||F|| with the Euclidean norm of the load vector."""
    norm_f = float(np.linalg.norm(F))
    if norm_f == 0.0:
        return Ok(0.0)
    return Ok(energy_norm(K, u_h.values).unwrap_or_raise() / norm_f)

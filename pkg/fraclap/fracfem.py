# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass
from pathlib import Path
import logging
import math

import numpy as np
from scipy import sparse
from scipy.special import gamma

from drresult import Ok, Result, constructs_as_result, noexcept, returns_result

from fraclap.errors import (
    AssemblyError,
    DimensionError,
    ParameterError,
    QuadratureError,
    io_expects,
)
from fraclap.fields import ControlField, PointFunction, StateField
from fraclap.mesh import ElementPoints, TriMesh
from fraclap.quadrature import MAX_DEGREE, QuadratureRule, triangle_quadrature

"""
Finite element building blocks for the integral fractional Laplacian.

The nonlocal stiffness matrix is assembled in `fraclap.stiffness`; this module
holds the parameters, the local operators and the energy norm.

Classes:
    - FracParams: Fractional order, dimension and normalization constant.
    - AssemblyConfig: Quadrature settings of the stiffness assembly.
    - StiffnessMatrix: Dense symmetric matrix of the bilinear form on interior vertices.

Functions:
    - normalization_constant: The constant C(d, s) of the fractional Laplacian.
    - assemble_mass: P1 mass matrix.
    - assemble_weighted_mass: Mass matrix weighted with a control.
    - assemble_coupling: Vector of integrals w u phi_i.
    - assemble_load: Vector of integrals f phi_i.
    - energy_norm: Norm induced by the stiffness matrix.
    - export_triplets: Write `i j value` lines.
"""

logger = logging.getLogger(__name__)

type MassMatrix = sparse.csr_matrix
type Load = PointFunction | float | np.ndarray


@returns_result(expects=[ParameterError])
def normalization_constant(s: float, d: int = 2) -> Result[float]:
    """C(d, s) = 2^{2s} s Gamma(s + d/2) / (pi^{d/2} Gamma(1 - s)).

    Args:
        s (float): Fractional order in (0, 1).
        d (int): Space dimension.

    Returns:
        Result[float]: The constant, or `Err(ParameterError)`.
    """
    if not 0.0 < s < 1.0:
        raise ParameterError(f'fractional order s must lie in (0, 1), got {s}')
    if d < 1:
        raise ParameterError(f'dimension must be positive, got {d}')
    return Ok(4.0**s * s * gamma(s + 0.5 * d) / (math.pi ** (0.5 * d) * gamma(1.0 - s)))


@constructs_as_result(expects=[ParameterError])
class FracParams:
    """Fractional order `s`, dimension `d` and the constant `c_ds`.

    Construction returns a `Result`:

        params = FracParams(0.5).unwrap_or_raise()
    """

    def __init__(self, s: float, d: int = 2) -> None:
        self.s: float = float(s)
        self.d: int = d
        self.c_ds: float = normalization_constant(self.s, d).unwrap_or_raise()

    def __repr__(self) -> str:
        return f'FracParams(s={self.s}, d={self.d}, c_ds={self.c_ds:.16g})'


@dataclass(frozen=True)
class AssemblyConfig:
    """Quadrature settings of the stiffness assembly.

    Attributes:
        o_singular (int): Gauss points per direction on touching element pairs
            and on elements touching the boundary.
        o_near (int): Degree of the tensor rules on separated pairs closer than
            `far_factor * h_max`.
        o_far (int): Degree of the rules for all farther pairs.
        n_angles (int): Starting angular nodes for complement weights on a disc,
            doubled by `calibrate_angles` until the weights settle.
        complement (str): Domain seen by the complement weight: `polygon`, the
            polygon spanned by the mesh boundary, or `disc`, the circumscribed disc.
        far_factor (float): Near/far threshold in units of `h_max`, at least 2.
        block_size (int): Elements per far-field block and pairs per singular chunk.
        threads (int): Worker threads; never changes the result.
    """

    o_singular: int = 5
    o_near: int = 4
    o_far: int = 2
    n_angles: int = 64
    complement: str = 'polygon'
    far_factor: float = 3.0
    block_size: int = 256
    threads: int = 1

    @returns_result(expects=[QuadratureError])
    def validate(self) -> Result['AssemblyConfig']:
        if not 1 <= self.o_singular <= 20:
            raise QuadratureError(f'o_singular must lie in 1..20, got {self.o_singular}')
        for name in ('o_near', 'o_far'):
            value = getattr(self, name)
            if not 1 <= value <= MAX_DEGREE:
                raise QuadratureError(f'{name} must lie in 1..{MAX_DEGREE}, got {value}')
        if self.n_angles < 4:
            raise QuadratureError(f'n_angles must be at least 4, got {self.n_angles}')
        if self.complement not in ('polygon', 'disc'):
            raise QuadratureError(f'unknown complement domain {self.complement!r}')
        if self.far_factor < 2.0:
            raise QuadratureError(f'far_factor must be at least 2, got {self.far_factor}')
        if self.block_size < 1 or self.threads < 1:
            raise QuadratureError('block_size and threads must be positive')
        return Ok(self)


@dataclass(frozen=True, eq=False)
class StiffnessMatrix:
    """Matrix of A(phi_i, phi_j) on the interior vertices.

    Attributes:
        matrix (np.ndarray): Dense, exactly symmetric.
        params (FracParams): Parameters it was assembled for.
    """

    matrix: np.ndarray
    params: FracParams

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


def _p1_matrix(mesh: TriMesh, rule: QuadratureRule, weights: np.ndarray, full: bool):
    # weights: per element and rule point, shape (t, m), area not included
    lam = rule.points
    local = np.einsum('tp,pa,pb->tab', weights * rule.weights, lam, lam)
    local *= mesh.areas[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    matrix = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    if not full:
        interior = mesh.interior_vertices
        matrix = matrix[interior][:, interior]
    return ((matrix + matrix.T) * 0.5).tocsr()


@noexcept
def assemble_mass(mesh: TriMesh, full: bool = False) -> MassMatrix:
    """P1 mass matrix, exact through the three-point degree-2 rule.

    Args:
        mesh (TriMesh): The mesh.
        full (bool): Include boundary vertices (indexed by vertex) instead of
            the interior numbering.

    Returns:
        MassMatrix: Sparse symmetric matrix.
    """
    rule = triangle_quadrature(2).unwrap()
    return _p1_matrix(mesh, rule, np.ones((mesh.n_triangles, rule.size)), full)


@returns_result(expects=[DimensionError])
def assemble_weighted_mass(mesh: TriMesh, q: ControlField) -> Result[MassMatrix]:
    """Matrix of integrals q phi_i phi_j on the interior vertices.

    The control is integrated on its own rule: the degree-2 rule for `p0`
    controls, which is exact, and the degree-4 nodes for nodal controls.

    Returns:
        Result[MassMatrix]: The matrix, or `Err(DimensionError)` if `q` lives on
        another mesh.
    """
    if q.values.shape[0] != mesh.n_triangles:
        raise DimensionError(f'control values {q.values.shape} do not match the mesh')
    return Ok(_p1_matrix(mesh, q.rule, q.at_rule_points(), full=False))


@returns_result(expects=[DimensionError])
def assemble_coupling(mesh: TriMesh, w: ControlField, u: StateField) -> Result[np.ndarray]:
    """Vector B(w, u) of integrals w u phi_i, consistent with `assemble_weighted_mass`."""
    if u.values.shape != (mesh.n_interior,):
        raise DimensionError(f'field has {u.values.shape} values, mesh {mesh.n_interior}')
    return Ok(assemble_weighted_mass(mesh, w).unwrap_or_raise() @ u.values)


@noexcept
def assemble_load(mesh: TriMesh, f: Load, points: ElementPoints | None = None) -> np.ndarray:
    """Load vector F_i = integral of f phi_i on the interior vertices.

    Args:
        mesh (TriMesh): The mesh.
        f (Load): A vectorized callable, a constant, or values at all vertices.
        points (ElementPoints | None): Integration points; the degree-4 rule by default.

    Returns:
        np.ndarray: Entries indexed by the interior numbering.
    """
    if isinstance(f, np.ndarray):
        return assemble_mass(mesh, full=True)[mesh.interior_vertices] @ f
    if points is None:
        points = mesh.points(triangle_quadrature(4).unwrap())
    values = (
        np.full(len(points), float(f))
        if isinstance(f, (int, float))
        else np.asarray(f(points.coordinates), dtype=float)
    )
    contributions = points.weights[:, None] * values[:, None] * points.barycentric
    full = np.bincount(
        mesh.triangles[points.elements].ravel(),
        weights=contributions.ravel(),
        minlength=mesh.n_vertices,
    )
    return full[mesh.interior_vertices]


@returns_result(expects=[DimensionError, AssemblyError])
def energy_norm(K: StiffnessMatrix | np.ndarray, v: np.ndarray) -> Result[float]:
    """sqrt(v^T K v).

    Returns:
        Result[float]: The norm, `Err(DimensionError)` on a size mismatch, or
        `Err(AssemblyError)` if the quadratic form is negative.
    """
    matrix = K.matrix if isinstance(K, StiffnessMatrix) else np.asarray(K)
    v = np.asarray(v, dtype=float)
    if v.shape != (matrix.shape[0],):
        raise DimensionError(f'vector of shape {v.shape} for a {matrix.shape} matrix')
    value = float(v @ (matrix @ v))
    scale = float(v @ v) * float(np.abs(np.diagonal(matrix)).max(initial=0.0))
    if value < -1e-12 * scale:
        raise AssemblyError(f'negative quadratic form {value:.3e}, stiffness matrix is broken')
    return Ok(math.sqrt(max(value, 0.0)))


@returns_result(expects=io_expects)
def export_triplets(
    matrix: StiffnessMatrix | np.ndarray | sparse.spmatrix, path: Path
) -> Result[Path]:
    """Write the nonzero entries as `i j value` lines with 17 significant digits."""
    data = matrix.matrix if isinstance(matrix, StiffnessMatrix) else matrix
    coo = sparse.coo_matrix(data)
    order = np.lexsort((coo.col, coo.row))
    Path(path).write_text(
        ''.join(
            f'{i} {j} {v:.17g}\n'
            for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order])
        )
    )
    return Ok(Path(path))

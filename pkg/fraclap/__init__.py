# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from typing import Sequence

from fraclap.errors import (
    AssemblyError,
    CaseError,
    ConfigError,
    ControlError,
    ConvergenceError,
    DimensionError,
    DomainError,
    EmptyMeshError,
    FracLapError,
    MeshError,
    NotSPDError,
    ParameterError,
    QuadratureError,
)
from fraclap.mesh import TriMesh, make_disc_mesh, make_polygon_mesh, refine_uniform
from fraclap.quadrature import QuadratureRule, triangle_quadrature
from fraclap.fields import AdjointField, ControlField, LoadVector, StateField, interpolate
from fraclap.fracfem import (
    AssemblyConfig,
    FracParams,
    StiffnessMatrix,
    assemble_load,
    assemble_mass,
    assemble_weighted_mass,
    energy_norm,
    normalization_constant,
)
from fraclap.stiffness import ConvexPolygon, Disc, assemble_stiffness, complement_weight
from fraclap.solver import (
    PdeSystem,
    solve_adjoint,
    solve_linearized_adjoint,
    solve_linearized_state,
    solve_state,
    spd_solve,
)
from fraclap.optctl import (
    OptimizeResult,
    OptimizerConfig,
    ProblemData,
    curvature_form,
    make_problem,
    optimize,
    optimize_fully_discrete,
    optimize_semidiscrete,
    project_box,
    reduced_gradient,
    reduced_objective,
)
from fraclap.verify import (
    EocTable,
    ManufacturedCase,
    build_case,
    error_norms,
    run_convergence_study,
)

__all__: Sequence[str] = [
    'FracLapError',
    'MeshError',
    'QuadratureError',
    'ParameterError',
    'DomainError',
    'AssemblyError',
    'EmptyMeshError',
    'DimensionError',
    'NotSPDError',
    'ConvergenceError',
    'ControlError',
    'CaseError',
    'ConfigError',
    'TriMesh',
    'make_disc_mesh',
    'make_polygon_mesh',
    'refine_uniform',
    'QuadratureRule',
    'triangle_quadrature',
    'StateField',
    'AdjointField',
    'ControlField',
    'LoadVector',
    'interpolate',
    'FracParams',
    'AssemblyConfig',
    'StiffnessMatrix',
    'normalization_constant',
    'assemble_mass',
    'assemble_weighted_mass',
    'assemble_load',
    'energy_norm',
    'Disc',
    'ConvexPolygon',
    'complement_weight',
    'assemble_stiffness',
    'PdeSystem',
    'spd_solve',
    'solve_state',
    'solve_adjoint',
    'solve_linearized_state',
    'solve_linearized_adjoint',
    'ProblemData',
    'OptimizerConfig',
    'OptimizeResult',
    'project_box',
    'make_problem',
    'reduced_objective',
    'reduced_gradient',
    'curvature_form',
    'optimize',
    'optimize_fully_discrete',
    'optimize_semidiscrete',
    'ManufacturedCase',
    'EocTable',
    'build_case',
    'error_norms',
    'run_convergence_study',
]

# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
import logging
import math

import numpy as np
from scipy.spatial import ConvexHull, Delaunay

from drresult import Err, Ok, Result, noexcept, returns_result

from fraclap.errors import MeshError, io_expects
from fraclap.quadrature import QuadratureRule, triangle_quadrature

"""
Conforming triangulations of the unit disc and of convex polygons.

Classes:
    - TriMesh: Immutable triangulation with boundary flags and interior numbering.
    - ElementPoints: Quadrature points of a mesh flattened over its elements.

Functions:
    - make_disc_mesh: Quasi-uniform mesh of the polygon inscribed in the unit circle.
    - make_polygon_mesh: Quasi-uniform mesh of a convex polygon.
    - refine_uniform: Red refinement with boundary snapping for disc meshes.
    - write_mesh, read_mesh: Plain text mesh format.
"""

logger = logging.getLogger(__name__)

AREA_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ElementPoints:
    """Quadrature points gathered over all elements.

    Attributes:
        elements (np.ndarray): Element index of every point, shape (N,).
        barycentric (np.ndarray): Barycentric coordinates in that element, shape (N, 3).
        coordinates (np.ndarray): Physical coordinates, shape (N, 2).
        weights (np.ndarray): Physical weights (rule weight times element area), shape (N,).
    """

    elements: np.ndarray
    barycentric: np.ndarray
    coordinates: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def element_sums(self, values: np.ndarray, n_elements: int) -> np.ndarray:
        """Per-element sums of `weights * values`."""
        return np.bincount(self.elements, weights=self.weights * values, minlength=n_elements)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation.

    Use `TriMesh.from_arrays` to build one; it orients the triangles and
    derives the boundary flags and the interior numbering.

    Attributes:
        vertices (np.ndarray): Coordinates, shape (n_vertices, 2).
        triangles (np.ndarray): Counterclockwise vertex triples, shape (n_triangles, 3).
        boundary_vertex_flags (np.ndarray): True for vertices on a boundary edge.
        interior_dof_map (np.ndarray): Interior index of every vertex, -1 on the boundary.
        h_max (float): Largest triangle diameter.
        curved_boundary (bool): Snap boundary midpoints to the unit circle on refinement.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray
    interior_dof_map: np.ndarray
    h_max: float
    curved_boundary: bool = False

    @staticmethod
    @returns_result(expects=[MeshError])
    def from_arrays(
        vertices: np.ndarray, triangles: np.ndarray, curved_boundary: bool = False
    ) -> Result['TriMesh']:
        """Build a mesh from coordinates and vertex triples.

        Args:
            vertices (np.ndarray): Coordinates, shape (n, 2).
            triangles (np.ndarray): Vertex triples in any orientation.
            curved_boundary (bool): Whether the mesh approximates the unit disc.

        Returns:
            Result[TriMesh]: The mesh, or `Err(MeshError)` for degenerate input.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f'vertices must have shape (n, 2), got {vertices.shape}')
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError(f'triangles must have shape (t, 3), got {triangles.shape}')
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError('triangle references a vertex that does not exist')
        signed = _signed_areas(vertices, triangles)
        scale = max(float(np.abs(signed).max()), 1e-300)
        if np.any(np.abs(signed) <= AREA_TOLERANCE * scale):
            raise MeshError('triangle with zero area')
        flip = signed < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]

        edges, counts = _edge_counts(triangles)
        flags = np.zeros(len(vertices), dtype=bool)
        flags[edges[counts == 1].ravel()] = True
        dof_map = np.full(len(vertices), -1, dtype=np.int64)
        interior = np.flatnonzero(~flags)
        dof_map[interior] = np.arange(len(interior))
        corners = vertices[triangles]
        h_max = float(_diameters(corners).max())
        return Ok(TriMesh(vertices, triangles, flags, dof_map, h_max, curved_boundary))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_interior(self) -> int:
        return int((self.interior_dof_map >= 0).sum())

    @cached_property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (t, 3, 2)."""
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * _signed_areas(self.vertices, self.triangles)

    @cached_property
    def diameters(self) -> np.ndarray:
        return _diameters(self.corners)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric functions, shape (t, 3, 2)."""
        c = self.corners
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    @cached_property
    def boundary_elements(self) -> np.ndarray:
        """True for triangles with at least one boundary vertex."""
        return self.boundary_vertex_flags[self.triangles].any(axis=1)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        """Vertex index of every interior degree of freedom."""
        return np.flatnonzero(self.interior_dof_map >= 0)

    def barycentric_at(self, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of `points` with respect to `elements`.

        `elements` has the leading shape of `points`.

        Points outside an element get the affine extension of its barycentric
        functions.
        """
        first = self.corners[elements, 0]
        grads = self.barycentric_gradients[elements]
        lam = np.einsum('...kd,...d->...k', grads, points - first)
        lam[..., 0] += 1.0
        return lam

    def points(self, rule: QuadratureRule) -> ElementPoints:
        """Apply `rule` on every element."""
        return self._gather(np.arange(self.n_triangles), rule)

    def mixed_points(self, inner_degree: int = 4, boundary_degree: int = 7) -> ElementPoints:
        """Degree `boundary_degree` on elements touching the boundary, `inner_degree` elsewhere."""
        inner = triangle_quadrature(inner_degree).unwrap()
        outer = triangle_quadrature(boundary_degree).unwrap()
        near = self.boundary_elements
        return _concatenate(
            [
                self._gather(np.flatnonzero(~near), inner),
                self._gather(np.flatnonzero(near), outer),
            ]
        )

    def _gather(self, elements: np.ndarray, rule: QuadratureRule) -> ElementPoints:
        m = rule.size
        el = np.repeat(elements, m)
        bary = np.tile(rule.points, (len(elements), 1))
        xy = np.einsum('nk,nkd->nd', bary, self.corners[el])
        w = np.tile(rule.weights, len(elements)) * self.areas[el]
        return ElementPoints(el, bary, xy, w)

    def nodal(self, interior_values: np.ndarray) -> np.ndarray:
        """Extend interior coefficients by zero to all vertices."""
        full = np.zeros(self.n_vertices)
        full[self.interior_vertices] = interior_values
        return full

    def evaluate(self, nodal_values: np.ndarray, points: ElementPoints) -> np.ndarray:
        """Evaluate a P1 function given by all vertex values at `points`."""
        return np.einsum(
            'nk,nk->n', points.barycentric, nodal_values[self.triangles[points.elements]]
        )

    @returns_result(expects=[MeshError])
    def validate(self) -> Result['TriMesh']:
        """Check the mesh invariants.

        Returns:
            Result[TriMesh]: The mesh itself, or `Err(MeshError)` naming the violation.
        """
        if np.any(self.areas <= 0.0):
            raise MeshError('triangle with non-positive signed area')
        edges, counts = _edge_counts(self.triangles)
        if np.any(counts > 2):
            raise MeshError('edge shared by more than two triangles')
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[edges[counts == 1].ravel()] = True
        if not np.array_equal(flags, self.boundary_vertex_flags):
            raise MeshError('boundary flags do not match the boundary edges')
        hull = ConvexHull(self.vertices[np.unique(self.triangles)])
        if not math.isclose(float(self.areas.sum()), hull.volume, rel_tol=1e-10):
            raise MeshError('triangles overlap or leave holes in the convex hull')
        on_hull = _distance_to_hull(hull, self.vertices[flags]) <= 1e-10 * math.sqrt(hull.volume)
        if not np.all(on_hull):
            raise MeshError('boundary edge inside the domain, mesh is not conforming')
        interior = np.flatnonzero(~flags)
        expected = np.full(self.n_vertices, -1, dtype=np.int64)
        expected[interior] = np.arange(len(interior))
        if not np.array_equal(expected, self.interior_dof_map):
            raise MeshError('interior numbering is not a bijection onto 0..n_interior-1')
        return Ok(self)


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    c = vertices[triangles]
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]


def _diameters(corners: np.ndarray) -> np.ndarray:
    sides = corners[:, [1, 2, 0]] - corners
    return np.linalg.norm(sides, axis=2).max(axis=1)


def _edge_counts(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    all_edges = np.sort(triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    return np.unique(all_edges, axis=0, return_counts=True)


def _distance_to_hull(hull: ConvexHull, points: np.ndarray) -> np.ndarray:
    # facet equations are n.x + c <= 0 inside with unit normals
    signed = points @ hull.equations[:, :2].T + hull.equations[:, 2]
    return np.abs(signed.max(axis=1))


def _concatenate(parts: list[ElementPoints]) -> ElementPoints:
    merged = ElementPoints(
        np.concatenate([p.elements for p in parts]),
        np.vstack([p.barycentric for p in parts]),
        np.vstack([p.coordinates for p in parts]),
        np.concatenate([p.weights for p in parts]),
    )
    order = np.argsort(merged.elements, kind='stable')
    return ElementPoints(
        merged.elements[order],
        merged.barycentric[order],
        merged.coordinates[order],
        merged.weights[order],
    )


@returns_result(expects=[MeshError])
def _triangulate(points: np.ndarray, curved_boundary: bool) -> Result[TriMesh]:
    # flat simplices on straight hull edges are dropped; anywhere else they leave a hole
    simplices = Delaunay(points).simplices
    areas = np.abs(_signed_areas(points, simplices))
    keep = areas > AREA_TOLERANCE * areas.max()
    dropped = int((~keep).sum())
    if dropped:
        logger.debug(f'dropping {dropped} flat triangles')
    mesh = TriMesh.from_arrays(points, simplices[keep], curved_boundary).unwrap_or_raise()
    match mesh.validate():
        case Err(e):
            raise MeshError(f'triangulation invalid after dropping {dropped} flat triangles: {e}')
    return Ok(mesh)


def _ring(count: int, radius: float, offset: float) -> np.ndarray:
    theta = 2.0 * math.pi * (np.arange(count) + offset) / count
    return radius * np.column_stack([np.cos(theta), np.sin(theta)])


@returns_result(expects=[MeshError])
def make_disc_mesh(n_boundary: int) -> Result[TriMesh]:
    """Mesh of the polygon inscribed in the unit circle.

    Points are placed on concentric rings of radius k/K, the outermost ring
    carrying the `n_boundary` boundary vertices, and triangulated by Delaunay.
    With `n_boundary` below 2*pi*1.5 the result is the fan around the origin.

    Args:
        n_boundary (int): Number of equally spaced boundary vertices, at least 8.

    Returns:
        Result[TriMesh]: The mesh, or `Err(MeshError)`.
    """
    if n_boundary < 8:
        raise MeshError(f'n_boundary must be at least 8, got {n_boundary}')
    rings = max(1, round(n_boundary / (2.0 * math.pi)))
    points = [np.zeros((1, 2))]
    for k in range(1, rings + 1):
        count = n_boundary if k == rings else max(3, round(n_boundary * k / rings))
        points.append(_ring(count, k / rings, 0.5 * ((rings - k) % 2)))
    mesh = _triangulate(np.vstack(points), curved_boundary=True).unwrap_or_raise()
    logger.debug(f'disc mesh: {mesh.n_triangles} triangles, {mesh.n_interior} interior vertices')
    return Ok(mesh)


@returns_result(expects=[MeshError])
def make_polygon_mesh(corners: np.ndarray, n_per_edge: int) -> Result[TriMesh]:
    """Mesh of a convex polygon.

    Every edge is split into `n_per_edge` segments. Interior points lie on
    copies of the boundary scaled about the centroid.

    Args:
        corners (np.ndarray): Corners of a convex polygon, shape (m, 2), m >= 3.
        n_per_edge (int): Segments per polygon edge, at least 1.

    Returns:
        Result[TriMesh]: The mesh, or `Err(MeshError)` for a non-convex polygon.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.ndim != 2 or corners.shape[1] != 2 or len(corners) < 3:
        raise MeshError(f'polygon needs at least three corners, got shape {corners.shape}')
    if n_per_edge < 1:
        raise MeshError(f'n_per_edge must be positive, got {n_per_edge}')
    hull = ConvexHull(corners)
    if len(hull.vertices) != len(corners):
        raise MeshError('polygon is not strictly convex')
    corners = corners[hull.vertices]
    centre = corners.mean(axis=0)
    closed = np.vstack([corners, corners[:1]])
    lengths = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    perimeter = float(lengths.sum())
    inradius = float(np.min(-(hull.equations[:, :2] @ centre + hull.equations[:, 2])))
    n_boundary = n_per_edge * len(corners)
    rings = max(1, round(inradius * n_boundary / perimeter))

    t = np.linspace(0.0, 1.0, n_per_edge, endpoint=False)
    boundary = np.vstack(
        [a + np.outer(t, b - a) for a, b in zip(closed[:-1], closed[1:])]
    )
    points = [centre[None, :], boundary]
    for k in range(1, rings):
        count = max(3, round(n_boundary * k / rings))
        s = (np.arange(count) + 0.5 * ((rings - k) % 2)) / count * perimeter
        ring = _walk_perimeter(closed, lengths, s)
        points.append(centre + (k / rings) * (ring - centre))
    return _triangulate(np.vstack(points), curved_boundary=False)


def _walk_perimeter(closed: np.ndarray, lengths: np.ndarray, s: np.ndarray) -> np.ndarray:
    start = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    edge = np.clip(np.searchsorted(start, s, side='right') - 1, 0, len(lengths) - 1)
    t = (s - start[edge]) / lengths[edge]
    return closed[edge] + t[:, None] * (closed[edge + 1] - closed[edge])


@noexcept
def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four at its edge midpoints.

    On a disc mesh midpoints of boundary edges are projected onto the unit circle.

    Args:
        mesh (TriMesh): A valid mesh.

    Returns:
        TriMesh: The refined mesh with four times as many triangles.
    """
    tris = mesh.triangles
    local = tris[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    edges, inverse, counts = np.unique(
        np.sort(local, axis=1), axis=0, return_inverse=True, return_counts=True
    )
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    if mesh.curved_boundary:
        on_boundary = counts == 1
        radius = np.linalg.norm(midpoints[on_boundary], axis=1, keepdims=True)
        midpoints[on_boundary] = midpoints[on_boundary] / radius
    mid = (mesh.n_vertices + inverse.reshape(-1)).reshape(-1, 3)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    m_ab, m_bc, m_ca = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.stack(
        [
            np.column_stack([a, m_ab, m_ca]),
            np.column_stack([m_ab, b, m_bc]),
            np.column_stack([m_ca, m_bc, c]),
            np.column_stack([m_ab, m_bc, m_ca]),
        ],
        axis=1,
    ).reshape(-1, 3)
    vertices = np.vstack([mesh.vertices, midpoints])
    refined = TriMesh.from_arrays(vertices, children, mesh.curved_boundary).unwrap_or_raise()
    logger.debug(f'refined mesh: {refined.n_triangles} triangles, h_max={refined.h_max:.4g}')
    return refined


@returns_result(expects=io_expects)
def write_mesh(mesh: TriMesh, path: Path) -> Result[Path]:
    """Write `NV NT`, then `x y bflag` per vertex, then `i j k` per triangle."""
    lines = [f'{mesh.n_vertices} {mesh.n_triangles}']
    lines += [
        f'{x:.17g} {y:.17g} {int(flag)}'
        for (x, y), flag in zip(mesh.vertices, mesh.boundary_vertex_flags)
    ]
    lines += [f'{i} {j} {k}' for i, j, k in mesh.triangles]
    Path(path).write_text('\n'.join(lines) + '\n')
    return Ok(Path(path))


@returns_result(expects=io_expects + [ValueError])
def read_mesh(path: Path, curved_boundary: bool = False) -> Result[TriMesh]:
    """Read a mesh written by `write_mesh`.

    Raises:
        MeshError: If the stored boundary flags disagree with the triangles.
    """
    rows = Path(path).read_text().split('\n')
    nv, nt = (int(v) for v in rows[0].split())
    if len(rows) < 1 + nv + nt:
        raise MeshError(f'{path}: expected {nv} vertices and {nt} triangles')
    vertex_rows = [row.split() for row in rows[1 : 1 + nv]]
    vertices = np.array([[float(x), float(y)] for x, y, _ in vertex_rows])
    flags = np.array([flag == '1' for _, _, flag in vertex_rows])
    triangles = np.array([[int(v) for v in row.split()] for row in rows[1 + nv : 1 + nv + nt]])
    mesh = TriMesh.from_arrays(vertices, triangles, curved_boundary).unwrap_or_raise()
    if not np.array_equal(mesh.boundary_vertex_flags, flags):
        raise MeshError(f'{path}: boundary flags do not match the triangles')
    return Ok(mesh)

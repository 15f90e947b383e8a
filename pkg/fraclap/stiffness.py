# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Iterator, Protocol
import logging
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse
from scipy.spatial import ConvexHull, cKDTree
from scipy.special import beta, betainc

from drresult import Ok, Result, noexcept, returns_result

from fraclap.errors import (
    DomainError,
    EmptyMeshError,
    MeshError,
    ParameterError,
    QuadratureError,
)
from fraclap.fracfem import AssemblyConfig, FracParams, StiffnessMatrix
from fraclap.mesh import TriMesh
from fraclap.quadrature import collapsed_rule, triangle_quadrature

"""
Nonlocal stiffness matrix of the integral fractional Laplacian on P1 elements.

For u, v vanishing outside the domain the bilinear form splits into

    C/2 * [ integral over Omega x Omega of (u(x)-u(y))(v(x)-v(y)) |x-y|^{-2-2s}
            + 2 * integral over Omega of u v omega ],

with the complement weight omega(x) = integral over the complement of |x-y|^{-2-2s}.
Element pairs of the double integral are split into identical, touching
(shared edge or vertex), near and far pairs. Identical and touching pairs
integrate the inner variable exactly in polar coordinates around the outer
quadrature point, so only smooth angular integrals remain.

Classes:
    - DomainDescriptor: Protocol for domains with a complement weight.
    - Disc: Disc with periodic trapezoid rule in angle.
    - ConvexPolygon: Convex polygon with exact per-edge angular integrals.
    - PairSets: Classification of element pairs.

Functions:
    - complement_weight: omega at points strictly inside a domain.
    - calibrate_angles: Angular resolution for a disc.
    - inner_moments, outer_moments: Polar kernel moments over a triangle.
    - classify_pairs: Touching and near element pairs.
    - assemble_stiffness: The stiffness matrix.
"""

logger = logging.getLogger(__name__)

INSIDE_TOLERANCE = 1e-13

# relative tolerances for ray and edge crossings
_PARALLEL = 1e-14
_ON_EDGE = 1e-12


class DomainDescriptor(Protocol):
    def contains(self, points: np.ndarray) -> np.ndarray: ...

    def weight(self, points: np.ndarray, s: float) -> np.ndarray: ...


@dataclass(frozen=True)
class Disc:
    """Disc around the origin.

    Attributes:
        radius (float): Radius.
        n_angles (int): Nodes of the periodic trapezoid rule.
    """

    radius: float = 1.0
    n_angles: int = 64

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points, axis=-1) < self.radius * (1.0 - INSIDE_TOLERANCE)

    def weight(self, points: np.ndarray, s: float) -> np.ndarray:
        theta = 2.0 * math.pi * np.arange(self.n_angles) / self.n_angles
        e = np.column_stack([np.cos(theta), np.sin(theta)])
        xe = points @ e.T
        rho = -xe + np.sqrt(self.radius**2 - np.sum(points**2, axis=-1)[:, None] + xe**2)
        return (2.0 * math.pi / self.n_angles) * np.sum(rho ** (-2.0 * s), axis=1) / (2.0 * s)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon with counterclockwise corners.

    The angular integral of rho^{-2s} over the sector seen through one edge at
    distance d is d^{-2s} times an integral of cos^{2s}, which has a closed form
    through the regularized incomplete beta function.
    """

    corners: np.ndarray

    @staticmethod
    @noexcept
    def from_mesh(mesh: TriMesh) -> 'ConvexPolygon':
        """Polygon spanned by the boundary vertices of a mesh of a convex domain."""
        boundary = mesh.vertices[mesh.boundary_vertex_flags]
        hull = ConvexHull(boundary)
        return ConvexPolygon(boundary[hull.vertices])

    def _edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = self.corners
        b = np.roll(self.corners, -1, axis=0)
        tangent = (b - a) / np.linalg.norm(b - a, axis=1)[:, None]
        normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        return a, b, normal

    def contains(self, points: np.ndarray) -> np.ndarray:
        a, _, normal = self._edges()
        scale = float(np.abs(self.corners).max())
        distance = np.einsum('ed,ned->ne', normal, a[None, :, :] - points[:, None, :])
        return np.all(distance > INSIDE_TOLERANCE * scale, axis=1)

    def weight(self, points: np.ndarray, s: float) -> np.ndarray:
        a, b, normal = self._edges()
        tangent = np.column_stack([-normal[:, 1], normal[:, 0]])
        to_a = a[None, :, :] - points[:, None, :]
        to_b = b[None, :, :] - points[:, None, :]
        d = np.einsum('ned,ed->ne', to_a, normal)
        phi_a = np.arctan2(np.einsum('ned,ed->ne', to_a, tangent), d)
        phi_b = np.arctan2(np.einsum('ned,ed->ne', to_b, tangent), d)
        sector = _cos_power_integral(phi_b, s) - _cos_power_integral(phi_a, s)
        return np.sum(d ** (-2.0 * s) * sector, axis=1) / (2.0 * s)


def _cos_power_integral(phi: np.ndarray, s: float) -> np.ndarray:
    # integral of cos(t)^{2s} from 0 to phi, |phi| < pi/2
    half = 0.5 * beta(0.5, s + 0.5) * betainc(0.5, s + 0.5, np.sin(phi) ** 2)
    return np.sign(phi) * half


@returns_result(expects=[DomainError])
def complement_weight(
    x: np.ndarray, domain: DomainDescriptor, params: FracParams
) -> Result[float | np.ndarray]:
    """omega(x) = 1/(2s) * integral over the angle of rho(x, theta)^{-2s}.

    Args:
        x (np.ndarray): One point of shape (2,) or points of shape (N, 2).
        domain (DomainDescriptor): Domain containing the points.
        params (FracParams): Fractional order.

    Returns:
        Result[float | np.ndarray]: The weight(s), or `Err(DomainError)` if a
        point is not strictly inside.
    """
    points = np.atleast_2d(np.asarray(x, dtype=float))
    inside = domain.contains(points)
    if not np.all(inside):
        raise DomainError(f'point {points[~inside][0]} is not strictly inside the domain')
    values = domain.weight(points, params.s)
    return Ok(float(values[0]) if np.ndim(x) == 1 else values)


@noexcept
def calibrate_angles(
    domain: DomainDescriptor,
    points: np.ndarray,
    params: FracParams,
    start: int = 64,
    tol: float = 1e-8,
    max_angles: int = 1 << 16,
) -> int:
    """Double the angular nodes of a disc until the weights change by less than `tol`.

    Domains without angular quadrature return `start`.
    """
    if not isinstance(domain, Disc):
        return start
    n = start
    previous = Disc(domain.radius, n).weight(points, params.s)
    while n < max_angles:
        current = Disc(domain.radius, 2 * n).weight(points, params.s)
        change = float(np.max(np.abs(current - previous) / np.abs(current)))
        logger.debug(f'calibrate_angles: n={n} relative change {change:.3e}')
        if change < tol:
            return n
        n, previous = 2 * n, current
    return n


def _ray(a: np.ndarray, b: np.ndarray, e: np.ndarray) -> np.ndarray:
    # distance from the origin along e to the line through a and b
    normal = np.stack([a[..., 1] - b[..., 1], b[..., 0] - a[..., 0]], axis=-1)
    num = np.sum(normal * a, axis=-1)[..., None]
    den = np.einsum('...d,...nd->...n', normal, e)
    return num / den


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _crossing_range(v: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entry and exit distance of rays from the origin through a triangle.

    Only crossings inside an edge segment count, so an edge whose line passes
    through the origin never yields a zero distance.

    Args:
        v (np.ndarray): Triangle corners relative to the ray origin, shape (P, Q, 3, 2).
        e (np.ndarray): Unit ray directions, shape (P, Q, n, 2).

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: Entry distance, exit distance and
        the mask of rays through the interior, each of shape (P, Q, n). Missed rays
        carry near = far = 1.
    """
    scale = np.linalg.norm(v, axis=-1).max(axis=-1)[..., None]
    near = np.full(e.shape[:-1], np.inf)
    far = np.zeros(e.shape[:-1])
    for i, j in ((0, 1), (1, 2), (2, 0)):
        a = v[..., None, i, :]
        d = v[..., None, j, :] - a
        den = _cross(e, d)
        valid = np.abs(den) > _PARALLEL * np.linalg.norm(d, axis=-1)
        safe = np.where(valid, den, 1.0)
        rho = _cross(a, d) / safe
        t = _cross(a, e) / safe
        valid &= (t >= -_ON_EDGE) & (t <= 1.0 + _ON_EDGE) & (rho > _ON_EDGE * scale)
        near = np.where(valid, np.minimum(near, rho), near)
        far = np.where(valid, np.maximum(far, rho), far)
    hit = np.isfinite(near) & (far > near)
    return np.where(hit, near, 1.0), np.where(hit, far, 1.0), hit


def _radial(near: np.ndarray, far: np.ndarray, p: float) -> np.ndarray:
    # integral of rho^{p-1} from near to far
    if abs(p) < 1e-12:
        return np.log(far / near)
    return (far**p - near**p) / p


def _directions(theta: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
    if u is None:
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    perp = np.stack([-u[..., 1], u[..., 0]], axis=-1)
    return (
        np.cos(theta)[..., None] * u[..., None, :] + np.sin(theta)[..., None] * perp[..., None, :]
    )


def inner_moments(x: np.ndarray, tri: np.ndarray, s: float, n_angular: int) -> np.ndarray:
    """Integral over the triangle of r r^T |r|^{-2-2s}, r = y - x, for x inside.

    Args:
        x (np.ndarray): Points inside the triangles, shape (P, Q, 2).
        tri (np.ndarray): Triangle corners, shape (P, 3, 2).
        s (float): Exponent parameter, s < 1.
        n_angular (int): Gauss points per angular sector.

    Returns:
        np.ndarray: Moments of shape (P, Q, 2, 2).
    """
    t, w = leggauss(n_angular)
    v = tri[:, None, :, :] - x[:, :, None, :]
    angle = np.arctan2(v[..., 1], v[..., 0])
    order = np.argsort(angle, axis=-1)
    angle = np.take_along_axis(angle, order, axis=-1)
    v = np.take_along_axis(v, order[..., None], axis=2)
    p = 2.0 - 2.0 * s
    m2 = np.zeros(x.shape[:2] + (2, 2))
    for i, j, lo, hi in (
        (0, 1, angle[..., 0], angle[..., 1]),
        (1, 2, angle[..., 1], angle[..., 2]),
        (2, 0, angle[..., 2], angle[..., 0] + 2.0 * math.pi),
    ):
        half = 0.5 * (hi - lo)
        theta = 0.5 * (hi + lo)[..., None] + half[..., None] * t
        e = _directions(theta)
        rho = _ray(v[..., i, :], v[..., j, :], e)
        radial = rho**p / p
        m2 += np.einsum('pqn,pqnd,pqnf->pqdf', half[..., None] * w * radial, e, e)
    return m2


def outer_moments(
    x: np.ndarray, tri: np.ndarray, s: float, n_angular: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel moments over a triangle seen from points outside it.

    Returns the integrals over the triangle of |r|^{-2-2s}, r |r|^{-2-2s} and
    r r^T |r|^{-2-2s} with r = y - x.

    Args:
        x (np.ndarray): Points outside the triangles, shape (P, Q, 2).
        tri (np.ndarray): Triangle corners, shape (P, 3, 2).
        s (float): Exponent parameter, s < 1.
        n_angular (int): Gauss points per angular sector.

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: Shapes (P, Q), (P, Q, 2), (P, Q, 2, 2).
    """
    t, w = leggauss(n_angular)
    v = tri[:, None, :, :] - x[:, :, None, :]
    towards = v.mean(axis=2)
    u = towards / np.linalg.norm(towards, axis=-1, keepdims=True)
    angle = np.arctan2(
        u[..., None, 0] * v[..., 1] - u[..., None, 1] * v[..., 0],
        np.einsum('pqd,pqkd->pqk', u, v),
    )
    order = np.argsort(angle, axis=-1)
    angle = np.take_along_axis(angle, order, axis=-1)
    v = np.take_along_axis(v, order[..., None], axis=2)
    m0 = np.zeros(x.shape[:2])
    m1 = np.zeros(x.shape[:2] + (2,))
    m2 = np.zeros(x.shape[:2] + (2, 2))
    # sectors between consecutive corner angles; a zero-width sector carries no weight
    for lo, hi in ((angle[..., 0], angle[..., 1]), (angle[..., 1], angle[..., 2])):
        half = 0.5 * (hi - lo)
        theta = 0.5 * (hi + lo)[..., None] + half[..., None] * t
        e = _directions(theta, u)
        near, far, hit = _crossing_range(v, e)
        weight = np.where(hit, half[..., None] * w, 0.0)
        m0 += np.sum(weight * _radial(near, far, -2.0 * s), axis=-1)
        m1 += np.einsum('pqn,pqnd->pqd', weight * _radial(near, far, 1.0 - 2.0 * s), e)
        m2 += np.einsum('pqn,pqnd,pqnf->pqdf', weight * _radial(near, far, 2.0 - 2.0 * s), e, e)
    return m0, m1, m2


@dataclass(frozen=True, eq=False)
class PairSets:
    """Unordered element pairs (i < j) that need more than the far-field rule.

    Attributes:
        touching (np.ndarray): Pairs sharing an edge or a vertex, shape (k, 2).
        near (np.ndarray): Disjoint pairs with centroid distance at most `radius`.
        radius (float): Centroid distance beyond which pairs are far.
    """

    touching: np.ndarray
    near: np.ndarray
    radius: float


def _centroid_distance(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    # shared by the near and far classification so both agree bit for bit
    diff = ca - cb
    return np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1])


@noexcept
def classify_pairs(mesh: TriMesh, far_factor: float) -> PairSets:
    t = mesh.n_triangles
    incidence = sparse.csr_matrix(
        (np.ones(3 * t), (np.repeat(np.arange(t), 3), mesh.triangles.ravel())),
        shape=(t, mesh.n_vertices),
    )
    shared = sparse.triu(incidence @ incidence.T, k=1).tocoo()
    touching = np.column_stack([shared.row, shared.col])
    touching = touching[np.lexsort((touching[:, 1], touching[:, 0]))]

    radius = far_factor * mesh.h_max
    tree = cKDTree(mesh.centroids)
    candidates = tree.query_pairs(radius * (1.0 + 1e-9), output_type='ndarray')
    candidates = np.sort(candidates.reshape(-1, 2), axis=1)
    distance = _centroid_distance(
        mesh.centroids[candidates[:, 0]], mesh.centroids[candidates[:, 1]]
    )
    candidates = candidates[distance <= radius]
    keys = candidates[:, 0] * t + candidates[:, 1]
    near = candidates[~np.isin(keys, touching[:, 0] * t + touching[:, 1])]
    near = near[np.lexsort((near[:, 1], near[:, 0]))]
    return PairSets(touching, near, radius)


def _chunks(n: int, size: int) -> Iterator[np.ndarray]:
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


def _scatter(acc: np.ndarray, dofs: np.ndarray, local: np.ndarray) -> None:
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    np.add.at(acc, (rows[keep], cols[keep]), local[keep])


def _identical(mesh: TriMesh, s: float, cfg: AssemblyConfig, elements: np.ndarray):
    rule = collapsed_rule(cfg.o_singular)
    corners = mesh.corners[elements]
    x = np.einsum('qk,pkd->pqd', rule.points, corners)
    m2 = inner_moments(x, corners, s, 2 * cfg.o_singular)
    weights = rule.weights[None, :] * mesh.areas[elements][:, None]
    grads = mesh.barycentric_gradients[elements]
    local = np.einsum('pq,pkd,pqde,ple->pkl', weights, grads, m2, grads)
    return mesh.interior_dof_map[mesh.triangles[elements]], local


def _touching(mesh: TriMesh, s: float, cfg: AssemblyConfig, pairs: np.ndarray):
    first, second = pairs[:, 0], pairs[:, 1]
    tri_a = mesh.triangles[first]
    tri_b = mesh.triangles[second]
    same = tri_a[:, :, None] == tri_b[:, None, :]
    # collapse the outer rule onto the first shared vertex of the first element
    apex = np.argmax(same.any(axis=2), axis=1)
    perm = (apex[:, None] + np.array([1, 2, 0])) % 3
    corners = np.take_along_axis(mesh.corners[first], perm[:, :, None], axis=1)
    rule = collapsed_rule(cfg.o_singular)
    x = np.einsum('qk,pkd->pqd', rule.points, corners)
    weights = rule.weights[None, :] * mesh.areas[first][:, None]

    q = rule.size
    lam_a = mesh.barycentric_at(np.repeat(first[:, None], q, axis=1), x)
    lam_b = mesh.barycentric_at(np.repeat(second[:, None], q, axis=1), x)
    grad_b = mesh.barycentric_gradients[second]
    m0, m1, m2 = outer_moments(x, mesh.corners[second], s, 2 * cfg.o_singular)

    eq = same.astype(float)
    shared_b = same.any(axis=1)
    c = np.concatenate(
        [
            lam_a - np.einsum('pab,pqb->pqa', eq, lam_b),
            np.where(shared_b[:, None, :], 0.0, -lam_b),
        ],
        axis=2,
    )
    g = np.concatenate(
        [
            np.einsum('pab,pbd->pad', eq, grad_b),
            np.where(shared_b[:, :, None], 0.0, grad_b),
        ],
        axis=1,
    )
    gm1 = np.einsum('pkd,pqd->pqk', g, m1)
    cc = np.einsum('pqk,pql,pq->pqkl', c, c, m0)
    cg = np.einsum('pqk,pql->pqkl', c, gm1)
    gg = np.einsum('pkd,pqde,ple->pqkl', g, m2, g)
    local = 2.0 * np.einsum('pq,pqkl->pkl', weights, cc - cg - cg.transpose(0, 1, 3, 2) + gg)
    dofs = np.concatenate(
        [
            mesh.interior_dof_map[tri_a],
            np.where(shared_b, -1, mesh.interior_dof_map[tri_b]),
        ],
        axis=1,
    )
    return dofs, local


def _near(mesh: TriMesh, s: float, cfg: AssemblyConfig, pairs: np.ndarray):
    rule = triangle_quadrature(cfg.o_near).unwrap()
    first, second = pairs[:, 0], pairs[:, 1]
    x = np.einsum('qk,pkd->pqd', rule.points, mesh.corners[first])
    y = np.einsum('qk,pkd->pqd', rule.points, mesh.corners[second])
    wx = rule.weights[None, :] * mesh.areas[first][:, None]
    wy = rule.weights[None, :] * mesh.areas[second][:, None]
    diff = x[:, :, None, :] - y[:, None, :, :]
    kernel = np.sum(diff * diff, axis=-1) ** (-1.0 - s)
    lam = rule.points
    kx = np.einsum('pa,pab,pb->pa', wx, kernel, wy)
    ky = np.einsum('pa,pab,pb->pb', wx, kernel, wy)
    aa = np.einsum('pa,ak,al->pkl', kx, lam, lam)
    bb = np.einsum('pb,bk,bl->pkl', ky, lam, lam)
    ab = -np.einsum('pa,pab,pb,ak,bl->pkl', wx, kernel, wy, lam, lam)
    local = 2.0 * np.block([[aa, ab], [ab.transpose(0, 2, 1), bb]])
    dofs = np.concatenate(
        [
            mesh.interior_dof_map[mesh.triangles[first]],
            mesh.interior_dof_map[mesh.triangles[second]],
        ],
        axis=1,
    )
    return dofs, local


@dataclass(frozen=True, eq=False)
class _FarField:
    coordinates: np.ndarray
    weights: np.ndarray
    weighted_basis: sparse.csc_matrix
    barycentric: np.ndarray


def _far_field(mesh: TriMesh, cfg: AssemblyConfig) -> _FarField:
    rule = triangle_quadrature(cfg.o_far).unwrap()
    points = mesh.points(rule)
    dofs = mesh.interior_dof_map[mesh.triangles[points.elements]]
    keep = dofs >= 0
    rows = np.broadcast_to(np.arange(len(points))[:, None], dofs.shape)
    basis = sparse.csr_matrix(
        (points.barycentric[keep], (rows[keep], dofs[keep])),
        shape=(len(points), mesh.n_interior),
    )
    weighted = sparse.diags(points.weights) @ basis
    return _FarField(points.coordinates, points.weights, weighted.T.tocsc(), rule.points)


def _far_block(mesh: TriMesh, s: float, radius: float, field: _FarField, elements: np.ndarray):
    m = len(field.barycentric)
    centroids = mesh.centroids
    distance = _centroid_distance(centroids[elements][:, None, :], centroids[None, :, :])
    far = np.repeat(np.repeat(distance > radius, m, axis=0), m, axis=1)
    rows = (elements[:, None] * m + np.arange(m)).ravel()
    x = field.coordinates[rows]
    sq = np.sum(field.coordinates**2, axis=1)
    r2 = np.sum(x**2, axis=1)[:, None] + sq[None, :] - 2.0 * x @ field.coordinates.T
    kernel = np.where(far, np.maximum(r2, 1e-300) ** (-1.0 - s), 0.0)
    kappa = kernel @ field.weights
    coupled = (field.weighted_basis @ kernel.T).T
    return rows, kappa, coupled


def _add_far(
    acc: np.ndarray,
    mesh: TriMesh,
    s: float,
    cfg: AssemblyConfig,
    radius: float,
    pool: ThreadPoolExecutor,
) -> None:
    # sum over ordered far pairs equals 2 * sum_p W_p kappa_p phi_i phi_j - 2 * Phi^T W K W Phi
    field = _far_field(mesh, cfg)
    m = len(field.barycentric)
    size = max(1, cfg.block_size // m)
    kappa = np.zeros(len(field.weights))
    blocks = pool.map(
        partial(_far_block, mesh, s, radius, field), _chunks(mesh.n_triangles, size)
    )
    for rows, kappa_rows, coupled in blocks:
        kappa[rows] = kappa_rows
        block = field.weighted_basis[:, rows].tocsr()
        touched = np.flatnonzero(np.diff(block.indptr))
        acc[touched] -= 2.0 * (block[touched] @ coupled)
    lam = field.barycentric
    local = 2.0 * np.einsum('tq,qk,ql->tkl', (field.weights * kappa).reshape(-1, m), lam, lam)
    _scatter(acc, mesh.interior_dof_map[mesh.triangles], local)


def _add_complement(
    acc: np.ndarray, mesh: TriMesh, s: float, cfg: AssemblyConfig, domain: DomainDescriptor
) -> None:
    for elements, rule in (
        (np.flatnonzero(mesh.boundary_elements), collapsed_rule(cfg.o_singular)),
        (np.flatnonzero(~mesh.boundary_elements), triangle_quadrature(4).unwrap()),
    ):
        if len(elements) == 0:
            continue
        x = np.einsum('qk,pkd->pqd', rule.points, mesh.corners[elements])
        flat = x.reshape(-1, 2)
        omega = np.concatenate(
            [domain.weight(flat[idx], s) for idx in _chunks(len(flat), 4096)]
        ).reshape(x.shape[:2])
        weights = rule.weights[None, :] * mesh.areas[elements][:, None] * omega
        local = 2.0 * np.einsum('pq,qk,ql->pkl', weights, rule.points, rule.points)
        _scatter(acc, mesh.interior_dof_map[mesh.triangles[elements]], local)


def _add_pairs(
    acc: np.ndarray,
    pool: ThreadPoolExecutor,
    local: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    items: np.ndarray,
    size: int,
) -> None:
    # chunks are reduced in submission order, independent of the worker count
    for dofs, matrices in pool.map(lambda idx: local(items[idx]), _chunks(len(items), size)):
        _scatter(acc, dofs, matrices)


def _default_domain(mesh: TriMesh, params: FracParams, cfg: AssemblyConfig) -> DomainDescriptor:
    if cfg.complement == 'disc':
        radius = float(np.linalg.norm(mesh.vertices, axis=1).max()) * (1.0 + 1e-12)
        # resolution settled at the centroids of elements touching the boundary
        centroids = mesh.centroids[mesh.boundary_elements]
        n = calibrate_angles(Disc(radius), centroids, params, start=cfg.n_angles)
        logger.debug(f'disc complement with {n} angles')
        return Disc(radius, n)
    return ConvexPolygon.from_mesh(mesh)


@returns_result(expects=[QuadratureError, MeshError, ParameterError, EmptyMeshError])
def assemble_stiffness(
    mesh: TriMesh,
    params: FracParams,
    cfg: AssemblyConfig = AssemblyConfig(),
    domain: DomainDescriptor | None = None,
) -> Result[StiffnessMatrix]:
    """Stiffness matrix of the fractional Laplacian on the interior P1 basis.

    Args:
        mesh (TriMesh): Conforming mesh of a convex domain.
        params (FracParams): Fractional order, dimension 2.
        cfg (AssemblyConfig): Quadrature settings.
        domain (DomainDescriptor | None): Domain for the complement weight; by
            default chosen by `cfg.complement`, the polygon spanned by the mesh
            boundary being where the discrete functions are supported.

    Returns:
        Result[StiffnessMatrix]: Exactly symmetric matrix, or `Err` with
        `QuadratureError`, `MeshError`, `ParameterError` or `EmptyMeshError`.
    """
    cfg.validate().unwrap_or_raise()
    mesh.validate().unwrap_or_raise()
    if params.d != 2:
        raise ParameterError(f'assembly supports d = 2 only, got d = {params.d}')
    n = mesh.n_interior
    if n == 0:
        raise EmptyMeshError('mesh has no interior vertices')
    if domain is None:
        domain = _default_domain(mesh, params, cfg)
    s = params.s
    pairs = classify_pairs(mesh, cfg.far_factor)
    logger.debug(
        f'assembling n={n}: {mesh.n_triangles} identical, {len(pairs.touching)} touching, '
        f'{len(pairs.near)} near pairs'
    )
    acc = np.zeros((n, n))
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        elements = np.arange(mesh.n_triangles)
        _add_pairs(acc, pool, partial(_identical, mesh, s, cfg), elements, cfg.block_size)
        _add_pairs(acc, pool, partial(_touching, mesh, s, cfg), pairs.touching, cfg.block_size)
        _add_pairs(acc, pool, partial(_near, mesh, s, cfg), pairs.near, cfg.block_size)
        _add_far(acc, mesh, s, cfg, pairs.radius, pool)
    _add_complement(acc, mesh, s, cfg, domain)
    upper = np.triu(acc)
    matrix = 0.5 * params.c_ds * (upper + np.triu(acc, 1).T)
    return Ok(StiffnessMatrix(matrix, params))

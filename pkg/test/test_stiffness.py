# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

import math

from scipy.integrate import dblquad, quad

from fraclap.errors import DomainError, EmptyMeshError, ParameterError
from fraclap.fracfem import AssemblyConfig, FracParams
from fraclap.mesh import TriMesh, refine_uniform
from fraclap.quadrature import triangle_quadrature
from fraclap.stiffness import (
    ConvexPolygon,
    Disc,
    assemble_stiffness,
    calibrate_angles,
    classify_pairs,
    complement_weight,
    inner_moments,
    outer_moments,
)

import numpy as np
from numpy.polynomial.legendre import leggauss
import pytest


TRIANGLE = np.array([[[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]]])


def second_moment(tri: np.ndarray, x: np.ndarray) -> np.ndarray:
    # exact for quadratics
    rule = triangle_quadrature(2).unwrap()
    y = rule.points @ tri
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    r = y - x
    return area * np.einsum('k,kd,kf->df', rule.weights, r, r)


def regular_polygon(n: int, radius: float = 1.0) -> ConvexPolygon:
    theta = 2.0 * math.pi * np.arange(n) / n
    return ConvexPolygon(radius * np.column_stack([np.cos(theta), np.sin(theta)]))


@pytest.mark.parametrize('s', [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_complement_weight_at_disc_centre(s):
    params = FracParams(s).unwrap()
    value = complement_weight(np.zeros(2), Disc(), params).unwrap()
    assert value == pytest.approx(math.pi / s, rel=1e-8)


@pytest.mark.parametrize('s', [0.2, 0.5, 0.8])
def test_disc_weight_matches_adaptive_quadrature(s):
    x = np.array([0.5, 0.0])

    def integrand(theta):
        e = np.array([math.cos(theta), math.sin(theta)])
        xe = float(x @ e)
        rho = -xe + math.sqrt(1.0 - float(x @ x) + xe * xe)
        return rho ** (-2.0 * s)

    reference = quad(integrand, 0.0, 2.0 * math.pi, epsabs=0.0, epsrel=1e-12)[0] / (2.0 * s)
    value = complement_weight(x, Disc(n_angles=256), FracParams(s).unwrap()).unwrap()
    assert value == pytest.approx(reference, rel=1e-8)


@pytest.mark.parametrize('s', [0.3, 0.7])
def test_fine_polygon_weight_approaches_disc(s):
    params = FracParams(s).unwrap()
    x = np.array([0.3, 0.2])
    polygon = complement_weight(x, regular_polygon(4096), params).unwrap()
    disc = complement_weight(x, Disc(n_angles=256), params).unwrap()
    assert polygon == pytest.approx(disc, rel=1e-5)


def test_square_weight_is_symmetric():
    square = ConvexPolygon(np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]))
    points = np.array([[0.4, 0.1], [-0.4, 0.1], [0.1, 0.4], [-0.1, -0.4]])
    values = complement_weight(points, square, FracParams(0.5).unwrap()).unwrap()
    assert values.shape == (4,)
    assert np.allclose(values, values[0], rtol=1e-12)


def test_weight_grows_towards_boundary():
    params = FracParams(0.5).unwrap()
    points = np.array([[0.0, 0.0], [0.5, 0.0], [0.9, 0.0], [0.99, 0.0]])
    values = complement_weight(points, Disc(n_angles=1024), params).unwrap()
    assert np.all(np.diff(values) > 0.0)


@pytest.mark.parametrize('x', [[1.0, 0.0], [1.5, 0.0]])
def test_point_not_strictly_inside_is_err(x):
    result = complement_weight(np.array(x), Disc(), FracParams(0.5).unwrap())
    assert isinstance(result.unwrap_err(), DomainError)
    result = complement_weight(np.array(x), regular_polygon(8), FracParams(0.5).unwrap())
    assert isinstance(result.unwrap_err(), DomainError)


def test_calibrate_angles_reaches_tolerance():
    params = FracParams(0.5).unwrap()
    points = np.array([[0.9, 0.0], [0.0, 0.5]])
    n = calibrate_angles(Disc(), points, params)
    assert n >= 64
    coarse = Disc(n_angles=n).weight(points, 0.5)
    fine = Disc(n_angles=2 * n).weight(points, 0.5)
    assert np.all(np.abs(fine - coarse) < 1e-8 * np.abs(fine))
    assert calibrate_angles(regular_polygon(8), points, params, start=32) == 32


def test_inner_moments_with_polynomial_kernel():
    # s = -1 turns the kernel into |r|^0, leaving the plain second moment
    x = np.array([[[0.4, 0.3], [0.45, 0.2], [0.35, 0.4]]])
    m2 = inner_moments(x, TRIANGLE, -1.0, 24)
    for q in range(3):
        assert np.allclose(m2[0, q], second_moment(TRIANGLE[0], x[0, q]), rtol=1e-9, atol=1e-12)


def test_outer_moments_with_polynomial_kernel():
    x = np.array([[[2.0, 1.5], [-0.5, -0.4], [1.2, 0.1]]])
    m0, m1, m2 = outer_moments(x, TRIANGLE, -1.0, 24)
    area = 0.4
    centroid = TRIANGLE[0].mean(axis=0)
    for q in range(3):
        assert m0[0, q] == pytest.approx(area, rel=1e-9)
        assert np.allclose(m1[0, q], area * (centroid - x[0, q]), rtol=1e-9, atol=1e-12)
        assert np.allclose(m2[0, q], second_moment(TRIANGLE[0], x[0, q]), rtol=1e-9, atol=1e-12)


def test_outer_moments_from_point_on_edge_line():
    # x is collinear with the bottom edge, so two corners share one direction
    tri = np.array([[[1.0, 0.0], [2.0, 0.0], [1.5, 1.0]]])
    x = np.array([[[0.5, 0.0]]])
    m0, m1, m2 = outer_moments(x, tri, -1.0, 24)
    assert m0[0, 0] == pytest.approx(0.5, rel=1e-9)
    assert np.allclose(m1[0, 0], 0.5 * (tri[0].mean(axis=0) - x[0, 0]), rtol=1e-9)
    assert np.allclose(m2[0, 0], second_moment(tri[0], x[0, 0]), rtol=1e-9)
    for s in (0.25, 0.5, 0.75):
        m0, m1, _ = outer_moments(x, tri, s, 24)

        def kernel(xi, eta, power=0):
            return (xi - 0.5) ** power * ((xi - 0.5) ** 2 + eta**2) ** (-1.0 - s)

        bounds = (0.0, 1.0, lambda eta: 1.0 + 0.5 * eta, lambda eta: 2.0 - 0.5 * eta)
        expected = dblquad(kernel, *bounds, epsabs=1e-13, epsrel=1e-12)[0]
        first = dblquad(kernel, *bounds, args=(1,), epsabs=1e-13, epsrel=1e-12)[0]
        assert m0[0, 0] == pytest.approx(expected, rel=1e-9)
        assert m1[0, 0, 0] == pytest.approx(first, rel=1e-9)


def test_classify_pairs(disc_mesh):
    pairs = classify_pairs(disc_mesh, 3.0)
    assert pairs.radius == pytest.approx(3.0 * disc_mesh.h_max)
    tris = disc_mesh.triangles
    for i, j in pairs.touching:
        assert i < j
        assert np.intersect1d(tris[i], tris[j]).size > 0
    for i, j in pairs.near:
        assert i < j
        assert np.intersect1d(tris[i], tris[j]).size == 0
        distance = np.linalg.norm(disc_mesh.centroids[i] - disc_mesh.centroids[j])
        assert distance <= pairs.radius
    touching = {tuple(p) for p in pairs.touching}
    assert not touching & {tuple(p) for p in pairs.near}


@pytest.mark.parametrize('s', [0.25, 0.3, 0.5, 0.7, 0.75])
def test_stiffness_is_exactly_symmetric_and_positive_definite(disc_mesh, s):
    K = assemble_stiffness(disc_mesh, FracParams(s).unwrap()).unwrap()
    assert K.n == disc_mesh.n_interior
    assert np.isfinite(K.matrix).all()
    assert np.array_equal(K.matrix, K.matrix.T)
    np.linalg.cholesky(K.matrix)
    assert np.linalg.eigvalsh(K.matrix).min() > 0.0


def test_stiffness_does_not_depend_on_thread_count(disc_mesh):
    params = FracParams(0.4).unwrap()
    serial = assemble_stiffness(disc_mesh, params, AssemblyConfig(block_size=8)).unwrap()
    parallel = assemble_stiffness(
        disc_mesh, params, AssemblyConfig(block_size=8, threads=4)
    ).unwrap()
    assert np.array_equal(serial.matrix, parallel.matrix)


def test_stiffness_with_disc_complement_is_close_to_polygon(disc_mesh):
    params = FracParams(0.5).unwrap()
    polygon = assemble_stiffness(disc_mesh, params).unwrap()
    cfg = AssemblyConfig(complement='disc', n_angles=1024)
    disc = assemble_stiffness(disc_mesh, params, cfg).unwrap()
    np.linalg.cholesky(disc.matrix)
    # the disc is larger than the polygon, so its complement weight is smaller
    assert np.all(np.diagonal(disc.matrix) < np.diagonal(polygon.matrix))


def refined_points(mesh, element, rule):
    sub = TriMesh.from_arrays(mesh.corners[element], [[0, 1, 2]]).unwrap()
    points = refine_uniform(refine_uniform(sub)).points(rule)
    return points.coordinates, points.weights


def test_disc_complement_calibrates_angles(disc_mesh):
    params = FracParams(0.5).unwrap()
    radius = float(np.linalg.norm(disc_mesh.vertices, axis=1).max()) * (1.0 + 1e-12)
    centroids = disc_mesh.centroids[disc_mesh.boundary_elements]
    n = calibrate_angles(Disc(radius), centroids, params, start=64)
    assert n > 64
    cfg = AssemblyConfig(complement='disc', n_angles=64)
    calibrated = assemble_stiffness(disc_mesh, params, cfg).unwrap()
    explicit = assemble_stiffness(disc_mesh, params, domain=Disc(radius, n)).unwrap()
    assert np.array_equal(calibrated.matrix, explicit.matrix)


def fine_points(mesh, element, vertex, rule):
    x, w = refined_points(mesh, element, rule)
    lam = mesh.barycentric_at(np.full(len(x), element), x)
    local = int(np.flatnonzero(mesh.triangles[element] == vertex)[0])
    return x, w * lam[:, local]


def brute_force_entry(mesh, i, j, s, c_ds):
    rule = triangle_quadrature(10).unwrap()
    parts = []
    for vertex in (i, j):
        support = np.flatnonzero((mesh.triangles == vertex).any(axis=1))
        pts = [fine_points(mesh, element, vertex, rule) for element in support]
        parts.append((np.vstack([p[0] for p in pts]), np.concatenate([p[1] for p in pts])))
    (x, wx), (y, wy) = parts
    r2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return -c_ds * float(wx @ r2 ** (-1.0 - s) @ wy)


def test_separated_entry_matches_brute_force(disc_mesh):
    params = FracParams(0.5).unwrap()
    cfg = AssemblyConfig(o_near=10, o_far=10)
    K = assemble_stiffness(disc_mesh, params, cfg).unwrap()
    interior = disc_mesh.interior_vertices
    coords = disc_mesh.vertices[interior]
    distance = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    a, b = np.unravel_index(np.argmax(distance), distance.shape)
    expected = brute_force_entry(disc_mesh, interior[a], interior[b], params.s, params.c_ds)
    dof = disc_mesh.interior_dof_map
    assert expected < 0.0
    assert K.matrix[dof[interior[a]], dof[interior[b]]] == pytest.approx(expected, rel=1e-3)


def vertex_sector_rays(mesh, x, m):
    # m Gauss directions between each pair of consecutive vertex directions seen from x
    t, w = leggauss(m)
    offset = mesh.vertices[None, :, :] - x[:, None, :]
    lower = np.sort(np.arctan2(offset[..., 1], offset[..., 0]), axis=1)
    upper = np.concatenate([lower[:, 1:], lower[:, :1] + 2.0 * math.pi], axis=1)
    half = 0.5 * (upper - lower)
    theta = ((0.5 * (upper + lower))[..., None] + half[..., None] * t).reshape(len(x), -1)
    weights = (half[..., None] * w).reshape(len(x), -1)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1), weights


def ray_segments(corners, x, e):
    # distances at which the rays x + rho e enter and leave every triangle
    near = np.full((len(corners),) + e.shape[:-1], np.inf)
    far = np.zeros_like(near)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        a = corners[:, None, i, :] - x[None, :, :]
        d = corners[:, j] - corners[:, i]
        den = e[None, ..., 0] * d[:, None, None, 1] - e[None, ..., 1] * d[:, None, None, 0]
        with np.errstate(divide='ignore', invalid='ignore'):
            rho = (a[..., 0] * d[:, None, 1] - a[..., 1] * d[:, None, 0])[..., None] / den
            t = (a[..., None, 0] * e[None, ..., 1] - a[..., None, 1] * e[None, ..., 0]) / den
        crossed = (den != 0.0) & (t >= 0.0) & (t <= 1.0) & (rho > 0.0)
        near = np.where(crossed, np.minimum(near, rho), near)
        far = np.where(crossed, np.maximum(far, rho), far)
    hit = np.isfinite(near)
    return np.where(hit, near, 1.0), np.where(hit, far, 1.0), hit


def radial_moment(near, far, p):
    with np.errstate(divide='ignore'):
        if abs(p) < 1e-12:
            return np.log(far / near)
        return (far**p - near**p) / p


def ray_stiffness(mesh, s, c_ds):
    """Stiffness on all vertices from rays through the whole plane.

    Along a ray the hat functions are linear on every element it crosses, so the
    radial integrals are exact. Beyond the last element the ray sees the domain
    complement, which enters the form twice.
    """
    rule = triangle_quadrature(7).unwrap()
    grads = mesh.barycentric_gradients
    everything = np.arange(mesh.n_triangles)
    full = np.zeros((mesh.n_vertices, mesh.n_vertices))
    for element in everything:
        x, wx = refined_points(mesh, element, rule)
        e, we = vertex_sector_rays(mesh, x, 6)
        w = wx[:, None] * we
        near, far, hit = ray_segments(mesh.corners, x, e)
        exit_distance = np.where(hit, far, 0.0).max(axis=0)
        near[element] = 0.0
        m0, m1, m2 = (w * radial_moment(near, far, k - 2.0 * s) for k in range(3))
        m0[element] = 0.0
        m1[element] = 0.0
        own = mesh.barycentric_at(np.full(len(x), element), x)
        shape = (mesh.n_triangles, len(x))
        extended = mesh.barycentric_at(
            np.broadcast_to(everything[:, None], shape), np.broadcast_to(x, shape + (2,))
        )
        alpha = np.concatenate([np.broadcast_to(own, extended.shape), -extended], axis=-1)
        alpha[element] = 0.0
        first = -np.einsum('tpd,tld->tpl', np.einsum('tpn,pnd->tpd', m1, e), grads)
        spread = np.einsum('tpn,pnd,pnf->tdf', m2, e, e)
        second = np.einsum('tkd,tdf,tlf->tkl', grads, spread, grads)
        local = np.einsum('tp,tpk,tpl->tkl', m0.sum(axis=-1), alpha, alpha)
        cross = np.einsum('tpk,tpl->tkl', alpha, first)
        local[:, :, 3:] += cross
        local[:, 3:, :] += cross.transpose(0, 2, 1)
        local[:, 3:, 3:] += second
        idx = np.concatenate(
            [np.broadcast_to(mesh.triangles[element], (mesh.n_triangles, 3)), mesh.triangles],
            axis=1,
        )
        np.add.at(full, (idx[:, :, None], idx[:, None, :]), local)
        tail = np.sum(w * exit_distance ** (-2.0 * s), axis=1) / s
        corners = mesh.triangles[element]
        full[np.ix_(corners, corners)] += np.einsum('p,pk,pl->kl', tail, own, own)
    return 0.5 * c_ds * full


@pytest.mark.slow
@pytest.mark.parametrize('s', [0.25, 0.5, 0.75])
def test_every_entry_matches_ray_integration(disc_mesh, s):
    assert disc_mesh.n_triangles <= 50
    params = FracParams(s).unwrap()
    cfg = AssemblyConfig(o_singular=10, o_near=10, o_far=6)
    K = assemble_stiffness(disc_mesh, params, cfg).unwrap()
    interior = disc_mesh.interior_vertices
    expected = ray_stiffness(disc_mesh, s, params.c_ds)[np.ix_(interior, interior)]
    dof = disc_mesh.interior_dof_map[interior]
    np.testing.assert_allclose(K.matrix[np.ix_(dof, dof)], expected, rtol=1e-3, atol=0.0)


def test_stiffness_of_mesh_without_interior_vertices_is_err():
    mesh = TriMesh.from_arrays(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [[0, 1, 2]])
    result = assemble_stiffness(mesh.unwrap(), FracParams(0.5).unwrap())
    assert isinstance(result.unwrap_err(), EmptyMeshError)


def test_stiffness_needs_plane(disc_mesh):
    result = assemble_stiffness(disc_mesh, FracParams(0.5, 3).unwrap())
    assert isinstance(result.unwrap_err(), ParameterError)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlab.geometry import (FlatCylinder, FlatSlab3D, FlatDisk, build_mesh,
                              laplace_beltrami, boundary_normal_derivative,
                              double_manifold, symmetric_extension,
                              geodesic_distance, volume_integrate,
                              convexity_report, mesh_to_json, mesh_from_json)


@pytest.fixture(scope="module")
def cyl():
    return build_mesh(FlatCylinder(1.0, 1.0, 16, 16))


@pytest.fixture(scope="module")
def slab():
    return build_mesh(FlatSlab3D(1.0, 1.0, 1.0, 8, 8, 8))


@pytest.fixture(scope="module")
def disk():
    return build_mesh(FlatDisk(1.0, 12, 36))


def test_cylinder_counts(cyl):
    # 17 wall-to-wall vertex columns, 16 periodic rows
    assert cyl.n_vertices == 17 * 16
    assert cyl.dim == 2
    assert np.isclose(cyl.weights.sum(), 1.0)   # total area L * l


def test_slab_volume(slab):
    assert np.isclose(slab.weights.sum(), 1.0)


def test_disk_area(disk):
    assert np.isclose(disk.weights.sum(), np.pi, rtol=1e-10)


def test_boundary_masks(cyl, slab, disk):
    # cylinder walls: two rings of ny vertices
    assert cyl.boundary_mask.sum() == 2 * 16
    assert slab.boundary_mask.sum() == 8 * 8 * 8 - 6 * 8 * 8
    assert disk.boundary_mask.sum() == 36


def test_normals_unit_and_outward(disk):
    nb = disk.normals[disk.boundary_mask]
    assert np.allclose(np.linalg.norm(nb, axis=1), 1.0)
    xb = disk.coords[disk.boundary_mask]
    assert np.all(np.sum(nb * xb, axis=1) > 0)


def test_laplacian_symmetric_weighted(cyl):
    L = laplace_beltrami(cyl).toarray()
    W = np.diag(cyl.weights)
    assert np.allclose(W @ L, (W @ L).T, atol=1e-12)
    assert np.allclose(L.sum(axis=1), 0.0, atol=1e-12)


def test_laplacian_quadratic_interior(slab):
    # x^2 respects the periodic axes; Delta x^2 = 2 at interior rows
    L = laplace_beltrami(slab)
    f = slab.coords[:, 0] ** 2
    lap = L @ f
    inner = ~slab.boundary_mask
    assert np.allclose(lap[inner], 2.0, atol=1e-9)


def test_laplacian_eigenfunction_cylinder(cyl):
    # cos(pi x) satisfies the Neumann condition on both walls
    L = laplace_beltrami(cyl)
    f = np.cos(np.pi * cyl.coords[:, 0])
    lam = -np.pi ** 2
    # second-order stencil: eigenvalue defect O(h^2)
    assert np.max(np.abs(L @ f - lam * f)) < 0.2


def test_normal_derivative_linear(disk):
    f = disk.coords[:, 0]
    dn = boundary_normal_derivative(disk, f)
    nb = disk.normals[disk.boundary_mask]
    assert np.allclose(dn, nb[:, 0], atol=5e-3)


def test_normal_derivative_dist2_disk(disk):
    # radial derivative of r^2 at r = R is 2R
    f = np.sum(disk.coords ** 2, axis=1)
    dn = boundary_normal_derivative(disk, f)
    assert np.allclose(dn, 2.0, atol=2e-2 / 12 ** 2 * 144 + 1e-2)


def test_double_cylinder_is_torus(cyl):
    d = double_manifold(cyl)
    assert d.boundary_mask.sum() == 0
    assert np.isclose(d.weights.sum(), 2 * cyl.weights.sum())
    f = np.cos(np.pi * cyl.coords[:, 0])
    ext = symmetric_extension(d, f)
    assert np.allclose(ext[d.double_map_copy1], f)
    assert np.allclose(ext[d.double_map_copy2], f)


def test_geodesic_distance_wraps(cyl):
    # point at (0, 0): the far side of the periodic axis is l/2 away
    y = int(np.argmin(np.sum(cyl.coords ** 2, axis=1)))
    d = geodesic_distance(cyl, y)
    assert d[y] == 0.0
    far = cyl.coords[:, 1] == cyl.coords[:, 1].max()
    near_half = np.abs(cyl.coords[far, 1] - 1.0) < 1e-9
    assert np.all(d <= np.sqrt(1.0 + 0.25) + 1e-12)


def test_geodesic_distance_disk_euclidean(disk):
    y = 0
    d = geodesic_distance(disk, y)
    assert np.allclose(d, np.linalg.norm(disk.coords - disk.coords[y],
                                         axis=1))


def test_convexity_classification(cyl, disk):
    assert convexity_report(cyl).convex        # totally geodesic
    assert convexity_report(disk).convex       # curvature 1/R > 0
    bad = convexity_report(cyl, curvatures=np.full((cyl.n_vertices, 1),
                                                   -1.0))
    assert not bad.convex


def test_mesh_json_roundtrip(cyl):
    m2 = mesh_from_json(mesh_to_json(cyl))
    assert m2.n_vertices == cyl.n_vertices
    assert np.allclose(m2.coords, cyl.coords)
    assert np.allclose(m2.edge_stiffness, cyl.edge_stiffness)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 16 * 16 - 1))
def test_distance_symmetry_cylinder(y):
    m = build_mesh(FlatCylinder(1.0, 1.0, 16, 16))
    d = geodesic_distance(m, y)
    x = (y + 37) % m.n_vertices
    assert np.isclose(d[x], geodesic_distance(m, x)[y])


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40))
def test_volume_integrate_constant(k):
    m = build_mesh(FlatCylinder(1.0, 1.0, 8, 8))
    assert np.isclose(volume_integrate(m, np.full(m.n_vertices, k)),
                      k * 1.0)

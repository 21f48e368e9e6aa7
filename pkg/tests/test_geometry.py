import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aggregates.geometry import (Box, Cylinder, GeometryError, HalfSpaces, Sphere, TriangleMesh, VoxelSDF,
                                 box_mesh, icosphere, load_obj, shape_from_dict, surface_distance,
                                 winding_number)


def test_sphere_sdf_values():
    s = Sphere((0.0, 0.0, 0.0), 2.0)
    assert s.signed_distance(np.zeros(3)) == pytest.approx(-2.0)
    assert s.signed_distance(np.array([3.0, 0, 0])) == pytest.approx(1.0)


def test_box_sdf_inside_outside_corner():
    b = Box((0, 0, 0), (2, 4, 6))
    assert b.signed_distance(np.array([1.0, 2, 3])) == pytest.approx(-1.0)
    assert b.signed_distance(np.array([3.0, 2, 3])) == pytest.approx(1.0)
    # outside past a corner: euclidean distance to the corner
    assert b.signed_distance(np.array([3.0, 5, 3])) == pytest.approx(np.sqrt(2))


def test_cylinder_sdf():
    c = Cylinder((0, 0, 0), (0, 0, 1), 1.0, 2.0)
    assert c.signed_distance(np.zeros(3)) == pytest.approx(-1.0)
    assert c.signed_distance(np.array([2.0, 0, 0])) == pytest.approx(1.0)
    assert c.signed_distance(np.array([0.0, 0, 3])) == pytest.approx(1.0)


def test_halfspaces_cube_and_bounds():
    n = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    h = HalfSpaces(tuple(n), (1.0,) * 6)
    assert h.signed_distance(np.zeros(3)) == pytest.approx(-1.0)
    lo, hi = h.bounds()
    np.testing.assert_allclose(lo, -1, atol=1e-9)
    np.testing.assert_allclose(hi, 1, atol=1e-9)


def test_unit_box_mesh_voxelized_center():
    mesh = box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    assert mesh.is_closed()
    assert mesh.volume() == pytest.approx(1.0)
    sdf = VoxelSDF.from_mesh(mesh, 64)
    voxel = float(np.max(sdf.spacing))
    assert abs(float(sdf.signed_distance(np.zeros(3))) + 0.5) <= 2 * voxel


def test_voxel_sdf_matches_analytic_box():
    mesh = box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    sdf = VoxelSDF.from_mesh(mesh, 32)
    ref = Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, size=(300, 3))
    err = np.abs(sdf.signed_distance(pts) - ref.signed_distance(pts))
    assert err.max() <= 2 * float(np.max(sdf.spacing))


def test_winding_number_inside_outside():
    mesh = icosphere(1.0, 2)
    w = winding_number(np.array([[0, 0, 0], [0.5, 0.2, 0.1], [2, 0, 0], [0, 0, -1.5]], float), mesh)
    np.testing.assert_allclose(w, [1, 1, 0, 0], atol=1e-9)


def test_surface_distance_box():
    mesh = box_mesh((0, 0, 0), (1, 1, 1))
    d = surface_distance(np.array([[0.5, 0.5, 0.5], [2, 0.5, 0.5], [2, 2, 0.5], [2, 2, 2]], float), mesh)
    np.testing.assert_allclose(d, [0.5, 1.0, np.sqrt(2), np.sqrt(3)], atol=1e-12)


def test_obj_roundtrip(tmp_path):
    mesh = box_mesh((0, 0, 0), (1, 2, 3))
    p = tmp_path / "b.obj"
    with open(p, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %r %r %r\n" % tuple(float(c) for c in v))
        for f in mesh.faces + 1:
            fh.write("f %d/1 %d/1 %d/1\n" % tuple(f))
    back = load_obj(p)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    assert back.volume() == pytest.approx(6.0)


def test_obj_malformed(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 zero\n")
    with pytest.raises(GeometryError, match="bad.obj:1"):
        load_obj(p)


def test_bad_face_index():
    with pytest.raises(GeometryError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


def test_unknown_shape_type():
    with pytest.raises(GeometryError):
        shape_from_dict({"type": "torus"})


@pytest.mark.parametrize("d", [
    {"type": "sphere", "center": [1.0, 2.0, 3.0], "radius": 0.5},
    {"type": "box", "min": [0.0, 0.0, 0.0], "max": [1.0, 2.0, 3.0]},
    {"type": "cylinder", "center": [0.0, 0.0, 0.0], "axis": [0.0, 1.0, 0.0], "radius": 1.0, "half_height": 2.0},
])
def test_shape_dict_roundtrip(d):
    s = shape_from_dict(d)
    assert shape_from_dict(s.to_dict()) == s


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_sphere_gradient_is_unit(x):
    x = np.array(x)
    s = Sphere((0.0, 0.0, 0.0), 1.0)
    if np.linalg.norm(x) > 1e-3:
        g = s.gradient(x)
        assert np.linalg.norm(g) == pytest.approx(1.0)
        # the generic finite-difference gradient agrees with the analytic one
        np.testing.assert_allclose(Shape_gradient(s, x), g, atol=1e-6)


def Shape_gradient(shape, x):
    from aggregates.geometry import Shape
    return Shape.gradient(shape, x)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_box_sdf_is_lipschitz(x):
    b = Box((-1, -1, -1), (1, 1, 1))
    x = np.array(x)
    y = x + np.array([0.1, -0.05, 0.02])
    assert abs(b.signed_distance(x) - b.signed_distance(y)) <= np.linalg.norm(x - y) + 1e-12

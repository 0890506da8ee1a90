import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forcereg.errors import (
    EmptyCloud,
    EmptySelection,
    ParseError,
    TopologyError,
    UnsupportedCellType,
)
from forcereg.geometry import (
    PointCloud,
    RigidTransform,
    VolumeMesh,
    crop_surface,
    extract_surface,
    load_point_cloud,
    load_volume_mesh,
    save_point_cloud,
    save_volume_mesh,
    signed_volumes,
    triangle_areas,
)
from forcereg.meshgen import ball_mesh, box_mesh


def _half_edge_check(tris):
    """Independent closedness oracle: every directed edge has exactly one reverse twin."""
    directed = {}
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            directed[(a, b)] = directed.get((a, b), 0) + 1
    return all(c == 1 and directed.get((b, a), 0) == 1 for (a, b), c in directed.items())


def test_unit_tet(tet):
    assert tet.n_tets == 1
    assert tet.volumes()[0] == pytest.approx(1 / 6)
    assert len(tet.surface.triangles) == 4
    assert tet.surface.n_s == 4


def test_two_tets_sharing_face():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    mesh = VolumeMesh(nodes, np.array([[0, 1, 2, 3], [0, 2, 1, 4]]))
    assert len(mesh.surface.triangles) == 6
    shared = {0, 1, 2}
    assert all(set(t) != shared for t in mesh.surface.triangles.tolist())


def test_out_of_range_index():
    nodes = np.eye(4, 3)
    with pytest.raises(TopologyError):
        VolumeMesh(nodes, np.array([[0, 1, 2, 4]]))


def test_degenerate_tet_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    with pytest.raises(TopologyError):
        VolumeMesh(nodes, np.array([[0, 1, 2, 3]]))


def test_negative_tets_are_reoriented():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    mesh = VolumeMesh(nodes, np.array([[0, 2, 1, 3]]))
    assert mesh.volumes()[0] > 0


def test_face_shared_by_three_tets():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [0.3, 0.3, 2]], dtype=float)
    tets = np.array([[0, 1, 2, 3], [0, 2, 1, 4], [0, 1, 2, 5]])
    with pytest.raises(TopologyError):
        extract_surface(nodes, tets)


@pytest.mark.parametrize("make", [lambda: box_mesh((4, 3, 5), jitter=0.2, seed=2), lambda: ball_mesh(7)])
def test_surface_closed_and_outward(make):
    mesh = make()
    tris = mesh.surface.triangles
    assert mesh.surface.is_closed_manifold()
    assert _half_edge_check(tris.tolist())
    # divergence theorem: sum of (centroid . area-normal) / 3 equals the volume for outward normals
    p = mesh.nodes[tris]
    normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) / 2
    enclosed = np.einsum("ij,ij->", p.mean(axis=1), normals) / 3
    assert enclosed == pytest.approx(mesh.volumes().sum(), rel=1e-10)


def test_liver_surface(liver):
    s = liver.surface
    assert s.n_s < liver.n
    assert _half_edge_check(s.triangles.tolist())
    assert liver.volumes().min() > 0


def test_vtk_roundtrip(tmp_path, box_small):
    for name in ("m.vtk", "m.tet"):
        save_volume_mesh(tmp_path / name, box_small)
        back = load_volume_mesh(tmp_path / name)
        np.testing.assert_array_equal(back.nodes, box_small.nodes)
        np.testing.assert_array_equal(back.tets, box_small.tets)


def test_vtk_rejects_other_cells(tmp_path):
    text = """# vtk DataFile Version 3.0
x
ASCII
DATASET UNSTRUCTURED_GRID
POINTS 3 double
0 0 0
1 0 0
0 1 0
CELLS 1 4
3 0 1 2
CELL_TYPES 1
5
"""
    (tmp_path / "tri.vtk").write_text(text)
    with pytest.raises(UnsupportedCellType):
        load_volume_mesh(tmp_path / "tri.vtk")


def test_vtk_out_of_range(tmp_path, tet):
    save_volume_mesh(tmp_path / "t.vtk", tet)
    text = (tmp_path / "t.vtk").read_text().replace("4 0 1 2 3", "4 0 1 2 4")
    (tmp_path / "t.vtk").write_text(text)
    with pytest.raises(TopologyError):
        load_volume_mesh(tmp_path / "t.vtk")


def test_point_cloud_formats(tmp_path, rng):
    pts = rng.normal(size=(7, 3))
    for name in ("c.xyz", "c.csv", "c.ply"):
        save_point_cloud(tmp_path / name, pts)
        np.testing.assert_array_equal(load_point_cloud(tmp_path / name).points, pts)


def test_xyz_three_lines(tmp_path):
    (tmp_path / "a.xyz").write_text("0 0 0\n1 0 0\n0 1 0\n")
    assert load_point_cloud(tmp_path / "a.xyz").m == 3


def test_cloud_errors(tmp_path):
    (tmp_path / "nan.xyz").write_text("0 0 0\nnan 1 2\n")
    with pytest.raises(ParseError):
        load_point_cloud(tmp_path / "nan.xyz")
    (tmp_path / "empty.xyz").write_text("\n")
    with pytest.raises(EmptyCloud):
        load_point_cloud(tmp_path / "empty.xyz")
    with pytest.raises(EmptyCloud):
        PointCloud(np.zeros((0, 3)))


def test_rigid_basics():
    T = RigidTransform.identity()
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(T.apply(x), x)
    Rz = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(Rz.apply(np.array([[1.0, 0, 0]])), [[0, 1, 0]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    axis=st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda a: np.linalg.norm(a) > 0.1),
    angle=st.floats(-np.pi, np.pi),
    t=st.tuples(*[st.floats(-100, 100)] * 3),
)
def test_rigid_properties(axis, angle, t):
    T = RigidTransform.from_axis_angle(axis, angle, t)
    pts = np.random.default_rng(0).normal(scale=50, size=(20, 3))
    out = T.apply(pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
    np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(T.inverse().apply(out), pts, atol=1e-9)
    np.testing.assert_allclose(T.compose(T.inverse()).matrix(), np.eye(4), atol=1e-12)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0)
    back = RigidTransform.from_dict(T.to_dict())
    np.testing.assert_array_equal(back.apply(pts), out)


def test_crop_full(box_small):
    cloud, ratio = crop_surface(box_small.surface, box_small.nodes, [0, 0, 100], 1.0)
    assert ratio == 1.0
    np.testing.assert_array_equal(np.sort(cloud.labels), box_small.surface.node_indices)


def test_crop_ratio_on_ball():
    mesh = ball_mesh(11, radius=50.0)
    surf = mesh.surface
    areas = triangle_areas(mesh.nodes, surf.triangles)
    _, ratio = crop_surface(surf, mesh.nodes, [0, 0, 60], 0.25)
    assert 0.25 <= ratio <= 0.25 + areas.max() / areas.sum()


def test_crop_patch_is_near_seed(liver):
    cloud, ratio = crop_surface(liver.surface, liver.nodes, [0, 0, 80], 0.2)
    top = liver.nodes[:, 2].max()
    # the patch grows from the top, so it should sit in the upper part of the organ
    assert np.median(cloud.points[:, 2]) > top - 40
    assert 0.2 <= ratio < 0.21


def test_crop_empty_selection(box_small):
    with pytest.raises(EmptySelection):
        crop_surface(box_small.surface, box_small.nodes, [0, 0, 0], 0.0)


def test_signed_volume_sign():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    assert signed_volumes(nodes, np.array([[0, 1, 2, 3]]))[0] > 0
    assert signed_volumes(nodes, np.array([[0, 2, 1, 3]]))[0] < 0

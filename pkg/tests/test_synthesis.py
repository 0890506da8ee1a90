import json

import numpy as np
import pytest

from forcereg.bvh import TriangleBVH
from forcereg.fem import ElasticMaterial, build_system
from forcereg.synthesis import (
    ForceSpec,
    fig2_case,
    generate_case,
    load_case,
    lobe_end_nodes,
    perturb_rigid,
    posterior_nodes,
    save_case,
)

SPEC = ForceSpec(kind="random_patches", radius=15.0, max_displacement=4.0)


def test_zero_forces(box_small):
    case = generate_case(box_small, ForceSpec(kind="zero"), 0.5, 0.0, 1)
    assert np.all(case.true_u == 0)
    np.testing.assert_array_equal(case.cloud.points, box_small.nodes[case.cloud.labels])


def test_forward_consistency(box_small):
    case = generate_case(box_small, SPEC, 0.3, 0.0, 2)
    sys = build_system(box_small, ElasticMaterial(), 0.01)
    u = sys.solve(case.true_forces)
    np.testing.assert_allclose(u, case.true_u, rtol=1e-10, atol=1e-12)
    assert np.linalg.norm(case.true_u.reshape(-1, 3), axis=1).max() == pytest.approx(4.0)
    loaded = np.flatnonzero(np.any(case.true_forces.reshape(-1, 3) != 0, axis=1))
    np.testing.assert_array_equal(loaded, case.force_nodes)
    assert set(case.force_nodes) <= set(posterior_nodes(box_small))


def test_fixed_nodes_forward(box_small):
    fixed = lobe_end_nodes(box_small, 0.05)
    case = generate_case(box_small, SPEC, 0.3, 0.0, 2, fixed_nodes=fixed)
    u = case.true_u.reshape(-1, 3)
    assert np.abs(u[fixed]).max() < 1e-4 * np.abs(u).max()


def test_noise_rms(liver):
    case = generate_case(liver, ForceSpec(kind="zero"), 1.0, 2.0, 4)
    assert case.cloud.m >= 1000
    tris = liver.nodes[liver.surface.triangles]
    _, _, d2 = TriangleBVH.build(tris).closest(case.cloud.points)
    rms = np.sqrt(d2.mean())
    assert 1.8 <= rms <= 2.2
    # within 4 sigma of the surface
    assert np.sqrt(d2).max() <= 4 * 2.0 * np.sqrt(3)


def test_reproducible(box_small, tmp_path):
    a = generate_case(box_small, SPEC, 0.3, 1.0, 9)
    b = generate_case(box_small, SPEC, 0.3, 1.0, 9)
    np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
    np.testing.assert_array_equal(a.true_u, b.true_u)
    save_case(a, tmp_path / "a")
    save_case(b, tmp_path / "b")
    assert (tmp_path / "a/truth.json").read_bytes() == (tmp_path / "b/truth.json").read_bytes()


def test_save_load_roundtrip(box_small, tmp_path):
    case = perturb_rigid(generate_case(box_small, SPEC, 0.3, 0.5, 3), 5.0, 5.0, seed=1)
    save_case(case, tmp_path / "c")
    back = load_case(tmp_path / "c")
    np.testing.assert_array_equal(back.true_u, case.true_u)
    np.testing.assert_array_equal(back.cloud.points, case.cloud.points)
    np.testing.assert_allclose(back.rigid.matrix(), case.rigid.matrix(), rtol=0, atol=0)
    truth = json.loads((tmp_path / "c/truth.json").read_text())
    assert truth["cloud_node_ids"] == [int(i) for i in case.cloud.labels]


def test_perturb_bounds(box_small):
    case = generate_case(box_small, SPEC, 0.3, 0.0, 3)
    same = perturb_rigid(case, 0.0, 0.0, seed=4)
    np.testing.assert_allclose(same.cloud.points, case.cloud.points, atol=1e-12)
    moved = perturb_rigid(case, 10.0, 10.0, seed=4)
    shift = np.linalg.norm(moved.cloud.points.mean(axis=0) - case.cloud.points.mean(axis=0))
    assert shift <= 10.0 + 1e-9  # rotation is about the centroid, so only translation moves it
    # the recorded rigid maps true deformed nodes onto the moved cloud
    pos = moved.deformed_nodes()[moved.cloud.labels]
    np.testing.assert_allclose(pos, moved.cloud.points, atol=1e-9)


def test_fig2_case(liver):
    case = fig2_case(liver)
    assert abs(case.cloud.m - 934) <= 0.1 * 934
    f = case.true_forces.reshape(-1, 3)
    assert np.all(f[:, :2] == 0) and np.all(f[:, 2] >= 0)
    assert len(case.true_fixed_nodes) > 0

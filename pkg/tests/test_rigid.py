import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forcereg.errors import DegenerateConfiguration
from forcereg.geometry import RigidTransform
from forcereg.rigid import procrustes, rigid_icp, rms_distance

from .oracles import horn_quaternion


def _random_T(rng, angle_max=np.pi, trans=50.0):
    return RigidTransform.from_axis_angle(rng.normal(size=3), rng.uniform(-angle_max, angle_max),
                                          rng.uniform(-trans, trans, 3))


def test_procrustes_exact(rng):
    src = rng.normal(scale=30, size=(50, 3))
    T = _random_T(rng)
    est = procrustes(src, T.apply(src))
    np.testing.assert_allclose(est.rotation, T.rotation, atol=1e-10)
    np.testing.assert_allclose(est.translation, T.translation, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0.01, 5.0))
def test_procrustes_matches_horn(seed, noise):
    rng = np.random.default_rng(seed)
    src = rng.normal(scale=20, size=(30, 3))
    dst = _random_T(rng).apply(src) + rng.normal(scale=noise, size=src.shape)
    est = procrustes(src, dst)
    R, t = horn_quaternion(src, dst)
    res_ours = np.sum((est.apply(src) - dst) ** 2)
    res_horn = np.sum((src @ R.T + t - dst) ** 2)
    assert res_ours == pytest.approx(res_horn, rel=1e-9)
    np.testing.assert_allclose(est.rotation, R, atol=1e-8)


def test_reflection_is_rejected(rng):
    src = rng.normal(size=(10, 3))
    dst = src * [1, 1, -1]  # a mirror image; the best proper rotation must still have det +1
    est = procrustes(src, dst)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_degenerate_inputs():
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        procrustes(line, line)
    with pytest.raises(DegenerateConfiguration):
        procrustes(np.zeros((2, 3)), np.zeros((2, 3)))


def test_icp_identity(rng):
    pts = rng.normal(scale=10, size=(100, 3))
    T = rigid_icp(pts, pts)
    np.testing.assert_allclose(T.matrix(), np.eye(4), atol=1e-12)


def test_icp_recovers_small_motion(box_small):
    surf = box_small.nodes[box_small.surface.node_indices]
    T = RigidTransform.from_axis_angle([1, 2, 0.5], np.radians(4), [1.5, -1.0, 0.5])
    est = rigid_icp(T.apply(surf), surf)
    np.testing.assert_allclose(est.compose(T).matrix(), np.eye(4), atol=1e-6)


def test_icp_subset_with_noise(liver, rng):
    surf = liver.nodes[liver.surface.node_indices]
    sub = surf[rng.permutation(len(surf))[: len(surf) // 2]]
    noise = 0.5
    T = RigidTransform.from_axis_angle([0, 0, 1], np.radians(3), [2.0, 1.0, -1.0])
    src = T.apply(sub + rng.normal(scale=noise, size=sub.shape))
    est = rigid_icp(src, surf)
    assert rms_distance(src, surf, est) <= 2 * noise

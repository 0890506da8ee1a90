"""Synthetic end-to-end properties of the whole pipeline."""

import numpy as np
import pytest

from forcereg.evaluation import TargetSet, compute_errors, registration_transform
from forcereg.geometry import PointCloud
from forcereg.meshgen import liver_like_mesh
from forcereg.registration import RegistrationConfig, register
from forcereg.rigid import rigid_icp
from forcereg.synthesis import ForceSpec, generate_case, lobe_end_nodes, perturb_rigid

SPEC = ForceSpec(kind="random_patches", radius=30.0)


@pytest.fixture(scope="module")
def medium():
    return liver_like_mesh(shape=(13, 10, 6))


def _err(u, case):
    return np.linalg.norm((u - case.true_u).reshape(-1, 3), axis=1).mean()


@pytest.mark.parametrize("seed", [0, 1])
def test_forward_inverse_consistency(medium, seed):
    # full visibility, no noise, same forward model: the registration recovers true_u
    case = generate_case(medium, SPEC, 1.0, 0.0, seed)
    res = register(medium, case.cloud, RegistrationConfig())
    scale = np.linalg.norm(case.true_u.reshape(-1, 3), axis=1).mean()
    assert _err(res.u_final, case) < 0.02 * scale


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_perturbation_then_icp(medium, seed):
    case = generate_case(medium, SPEC, 0.4, 0.0, seed, fixed_nodes=lobe_end_nodes(medium))
    base = _err(register(medium, case.cloud, RegistrationConfig()).u_final, case)
    moved = perturb_rigid(case, 5.0, 5.0, seed=100 + seed)
    T = rigid_icp(moved.cloud, medium.nodes[medium.surface.node_indices])
    res = register(medium, PointCloud(T.apply(moved.cloud.points)), RegistrationConfig())
    targets = TargetSet(medium.nodes, moved.deformed_nodes())
    err = compute_errors(targets, registration_transform(medium.nodes, res.u_final, T.inverse())).mean
    assert abs(err - base) <= 0.25 * base


def test_poisson_ratio_robustness(medium):
    means = {}
    for nu in (0.45, 0.49):
        errs = []
        for seed in range(5):
            case = generate_case(medium, SPEC, 0.25, 0.0, seed, fixed_nodes=lobe_end_nodes(medium))
            errs.append(_err(register(medium, case.cloud, RegistrationConfig(poisson_ratio=nu)).u_final, case))
        means[nu] = np.mean(errs)
    assert abs(means[0.45] - means[0.49]) < 0.15 * means[0.49]


def test_noise_degrades_gracefully(medium):
    clean = generate_case(medium, SPEC, 0.3, 0.0, 3, fixed_nodes=lobe_end_nodes(medium))
    noisy = generate_case(medium, SPEC, 0.3, 2.0, 3, fixed_nodes=lobe_end_nodes(medium))
    e_clean = _err(register(medium, clean.cloud, RegistrationConfig()).u_final, clean)
    e_noisy = _err(register(medium, noisy.cloud, RegistrationConfig()).u_final, noisy)
    assert np.isfinite(e_noisy)
    assert e_noisy < np.linalg.norm(noisy.true_u.reshape(-1, 3), axis=1).mean()
    assert e_clean <= e_noisy + 0.5

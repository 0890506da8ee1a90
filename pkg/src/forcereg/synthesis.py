"""In-silico phantoms: known forces -> forward FEM -> cropped, noisy surface cloud."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from .fem import ElasticMaterial, build_system
from .geometry import (
    PointCloud,
    RigidTransform,
    VolumeMesh,
    crop_surface,
    load_point_cloud,
    load_volume_mesh,
    save_point_cloud,
    save_volume_mesh,
)


@dataclass(frozen=True)
class ForceSpec:
    """How to load the phantom.

    ``axis_patch``: every posterior surface node within ``radius`` (in the
    plane normal to ``axis``) of ``center`` is pushed along ``+axis``.
    ``random_patches``: ``n_patches`` patches grown around random posterior
    seed nodes, each pushed inward along the seed's normal.
    With ``max_displacement`` set, forces are rescaled so the largest nodal
    displacement has that length (mm).
    """

    kind: Literal["zero", "axis_patch", "random_patches"] = "axis_patch"
    axis: int = 2
    magnitude: float = 1.0
    center: Optional[tuple] = None
    radius: float = 45.0
    n_patches: int = 2
    max_displacement: Optional[float] = 15.0


def posterior_nodes(mesh: VolumeMesh, axis: int = 2, cos_min: float = 0.3) -> np.ndarray:
    """Surface nodes whose outward normal points toward ``-axis``."""
    normals = mesh.surface.vertex_normals(mesh.nodes)
    ids = mesh.surface.node_indices
    return ids[normals[ids, axis] < -cos_min]


def anterior_nodes(mesh: VolumeMesh, axis: int = 2, cos_min: float = 0.3) -> np.ndarray:
    normals = mesh.surface.vertex_normals(mesh.nodes)
    ids = mesh.surface.node_indices
    return ids[normals[ids, axis] > cos_min]


def build_forces(mesh: VolumeMesh, spec: ForceSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Nodal force vector (3n) and the ids of loaded nodes."""
    f = np.zeros((mesh.n, 3))
    if spec.kind == "zero":
        return f.ravel(), np.zeros(0, dtype=np.int64)
    post = posterior_nodes(mesh, spec.axis)
    plane = [d for d in range(3) if d != spec.axis]
    if spec.kind == "axis_patch":
        lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
        center = np.asarray(spec.center if spec.center is not None else ((lo + hi) / 2)[plane], dtype=float)
        dist = np.linalg.norm(mesh.nodes[post][:, plane] - center, axis=1)
        loaded = np.sort(post[dist <= spec.radius])
        f[loaded, spec.axis] = spec.magnitude
    elif spec.kind == "random_patches":
        normals = mesh.surface.vertex_normals(mesh.nodes)
        chosen = []
        for _ in range(spec.n_patches):
            seed = int(rng.choice(post))
            near = post[np.linalg.norm(mesh.nodes[post] - mesh.nodes[seed], axis=1) <= spec.radius]
            scale = spec.magnitude * rng.uniform(0.5, 1.0)
            f[near] += -scale * normals[seed]
            chosen.append(near)
        loaded = np.unique(np.concatenate(chosen))
    else:
        raise ValueError(f"unknown force kind {spec.kind!r}")
    return f.ravel(), loaded


@dataclass
class SyntheticCase:
    mesh: VolumeMesh
    true_forces: np.ndarray
    true_u: np.ndarray
    cloud: PointCloud
    visibility_ratio: float
    achieved_visibility: float
    noise_sigma: float
    rng_seed: int
    true_fixed_nodes: Optional[np.ndarray] = None
    force_nodes: Optional[np.ndarray] = None
    # maps mesh-frame coordinates into the cloud frame
    rigid: RigidTransform = field(default_factory=RigidTransform.identity)
    params: dict = field(default_factory=dict)

    def deformed_nodes(self) -> np.ndarray:
        """True deformed node positions, in the cloud frame."""
        return self.rigid.apply(self.mesh.nodes + self.true_u.reshape(-1, 3))


def generate_case(
    mesh: VolumeMesh,
    force_spec: ForceSpec,
    visibility: float,
    noise_sigma: float,
    seed: int,
    fixed_nodes: Optional[Sequence[int]] = None,
    material: ElasticMaterial = ElasticMaterial(),
    k_ss: float = 0.01,
    crop_seed: Optional[Sequence[float]] = None,
) -> SyntheticCase:
    """Forward-simulate ``force_spec`` and crop/noise the deformed surface.

    With ``fixed_nodes`` the forward model pins them by penalty and uses no
    soft springs; otherwise it uses soft springs ``k_ss``. The crop grows
    from ``crop_seed`` (default: top-centre of the deformed bounding box).
    """
    if not 0 < visibility <= 1:
        raise ValueError("visibility must lie in (0, 1]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    f, loaded = build_forces(mesh, force_spec, rng)
    if fixed_nodes is not None:
        fixed_nodes = np.asarray(sorted(set(int(i) for i in fixed_nodes)), dtype=np.int64)
        system = build_system(mesh, material, 0.0, fixed_nodes=fixed_nodes)
    else:
        system = build_system(mesh, material, k_ss)
    u = system.solve(f)
    peak = float(np.linalg.norm(u.reshape(-1, 3), axis=1).max())
    if force_spec.max_displacement is not None and peak > 0:
        scale = force_spec.max_displacement / peak
        f = f * scale
        u = system.solve(f)
    deformed = mesh.nodes + u.reshape(-1, 3)
    if crop_seed is None:
        lo, hi = deformed.min(axis=0), deformed.max(axis=0)
        crop_seed = [(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[2]]
    cloud, achieved = crop_surface(mesh.surface, deformed, crop_seed, visibility)
    pts = cloud.points
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    params = {
        "force_spec": asdict(force_spec),
        "youngs_modulus": material.youngs_modulus,
        "poisson_ratio": material.poisson_ratio,
        "k_ss": None if fixed_nodes is not None else k_ss,
        "crop_seed": [float(v) for v in crop_seed],
    }
    return SyntheticCase(
        mesh=mesh,
        true_forces=f,
        true_u=u,
        cloud=PointCloud(pts, labels=cloud.labels),
        visibility_ratio=float(visibility),
        achieved_visibility=float(achieved),
        noise_sigma=float(noise_sigma),
        rng_seed=int(seed),
        true_fixed_nodes=fixed_nodes,
        force_nodes=loaded,
        params=params,
    )


def random_rigid(max_angle_deg: float, max_trans: float, rng: np.random.Generator) -> tuple[np.ndarray, float, np.ndarray]:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(max_angle_deg) * rng.uniform()
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return axis, angle, direction * max_trans * rng.uniform()


def perturb_rigid(case: SyntheticCase, max_angle: float, max_trans: float, seed: int) -> SyntheticCase:
    """Move the cloud by a random rigid motion about its centroid.

    Rotation angle is uniform in ``[0, max_angle]`` degrees about a uniform
    random axis; translation has uniform random direction and length in
    ``[0, max_trans]`` mm. The motion is composed into ``case.rigid``.
    """
    if max_angle < 0 or max_trans < 0:
        raise ValueError("bounds must be non-negative")
    rng = np.random.default_rng(seed)
    axis, angle, trans = random_rigid(max_angle, max_trans, rng)
    c = case.cloud.points.mean(axis=0)
    R = RigidTransform.from_axis_angle(axis, angle).rotation
    T = RigidTransform(R, c - R @ c + trans)
    cloud = PointCloud(T.apply(case.cloud.points), case.cloud.labels)
    params = dict(case.params, perturbation={"max_angle": max_angle, "max_trans": max_trans, "seed": seed})
    return replace(case, cloud=cloud, rigid=T.compose(case.rigid), params=params)


def _ids(a) -> Optional[list]:
    return None if a is None else [int(i) for i in a]


def save_case(case: SyntheticCase, directory, mesh_name: str = "mesh.vtk") -> Path:
    """Write ``mesh.vtk``, ``cloud.xyz`` and ``truth.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_volume_mesh(d / mesh_name, case.mesh)
    save_point_cloud(d / "cloud.xyz", case.cloud)
    truth = {
        "mesh": mesh_name,
        "cloud": "cloud.xyz",
        "rng_seed": case.rng_seed,
        "visibility_ratio": case.visibility_ratio,
        "achieved_visibility": case.achieved_visibility,
        "noise_sigma": case.noise_sigma,
        "true_fixed_nodes": _ids(case.true_fixed_nodes),
        "force_nodes": _ids(case.force_nodes),
        "cloud_node_ids": _ids(case.cloud.labels),
        "rigid": case.rigid.to_dict(),
        "params": case.params,
        "forces": case.true_forces.reshape(-1, 3).tolist(),
        "u": case.true_u.reshape(-1, 3).tolist(),
    }
    (d / "truth.json").write_text(json.dumps(truth, indent=1) + "\n")
    return d


def load_truth(directory) -> dict:
    return json.loads((Path(directory) / "truth.json").read_text())


def load_case(directory) -> SyntheticCase:
    d = Path(directory)
    t = load_truth(d)
    mesh = load_volume_mesh(d / t["mesh"])
    cloud = load_point_cloud(d / t["cloud"])
    labels = t.get("cloud_node_ids")

    def arr(key):
        return None if t.get(key) is None else np.asarray(t[key], dtype=np.int64)

    return SyntheticCase(
        mesh=mesh,
        true_forces=np.asarray(t["forces"], dtype=float).ravel(),
        true_u=np.asarray(t["u"], dtype=float).ravel(),
        cloud=PointCloud(cloud.points, None if labels is None else np.asarray(labels)),
        visibility_ratio=t["visibility_ratio"],
        achieved_visibility=t["achieved_visibility"],
        noise_sigma=t["noise_sigma"],
        rng_seed=t["rng_seed"],
        true_fixed_nodes=arr("true_fixed_nodes"),
        force_nodes=arr("force_nodes"),
        rigid=RigidTransform.from_dict(t["rigid"]),
        params=t["params"],
    )


FIG2_VISIBILITY = 0.6


def lobe_end_nodes(mesh: VolumeMesh, fraction: float = 0.1) -> np.ndarray:
    """Surface nodes within ``fraction`` of the x range from the thick (-x) end."""
    ids = mesh.surface.node_indices
    x = mesh.nodes[:, 0]
    return ids[x[ids] <= x.min() + fraction * (x.max() - x.min())]


def fig2_case(mesh: Optional[VolumeMesh] = None, visibility: float = FIG2_VISIBILITY,
              noise_sigma: float = 0.0, seed: int = 0) -> SyntheticCase:
    """The z-load phantom.

    A posterior patch centred at 60% of the length is pushed along +z
    (peak displacement 15 mm) while the thick-lobe end is pinned. The
    default crop gives roughly 930-950 cloud points on the liver-like mesh.
    """
    from .meshgen import liver_like_mesh

    mesh = mesh if mesh is not None else liver_like_mesh()
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    span = hi - lo
    center = (lo[0] + 0.6 * span[0], lo[1] + 0.5 * span[1])
    spec = ForceSpec(kind="axis_patch", axis=2, center=center, radius=0.25 * span[0], max_displacement=15.0)
    return generate_case(mesh, spec, visibility, noise_sigma, seed, fixed_nodes=lobe_end_nodes(mesh))

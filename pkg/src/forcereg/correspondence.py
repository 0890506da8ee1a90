"""Closest-point correspondences between a point cloud and the deformed surface.

The correspondence matrix C (3m x 3n) is never formed. Each cloud point
stores its surface triangle, the triangle's three node ids and barycentric
weights; ``apply_C`` and ``apply_Ct`` evaluate the products directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvh import TriangleBVH, closest_point_triangle
from .errors import DegenerateTriangle, DimensionMismatch, EmptySurface
from .geometry import PointCloud, SurfaceMesh


def closest_point_on_triangle(p, a, b, c):
    """Return ``(point, barycentric, distance)`` for the closest point of abc to p."""
    p, a, b, c = (np.asarray(v, dtype=float) for v in (p, a, b, c))
    area2 = np.linalg.norm(np.cross(b - a, c - a))
    scale = max(np.ptp(np.stack([a, b, c]), axis=0).max(), 1e-300)
    if area2 <= 1e-14 * scale * scale:
        raise DegenerateTriangle("triangle has (near) zero area")
    lam = np.array(closest_point_triangle(p, a, b, c))
    point = lam[0] * a + lam[1] * b + lam[2] * c
    return point, lam, float(np.linalg.norm(point - p))


@dataclass(frozen=True)
class CorrespondenceSet:
    triangle_ids: np.ndarray  # (m,)
    nodes: np.ndarray  # (m, 3) global node ids
    bary: np.ndarray  # (m, 3)
    closest: np.ndarray  # (m, 3) closest surface points
    distance: np.ndarray  # (m,)
    n_nodes: int

    @property
    def m(self) -> int:
        return len(self.triangle_ids)

    def apply_C(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != 3 * self.n_nodes:
            raise DimensionMismatch(f"expected {3 * self.n_nodes} entries, got {v.size}")
        v3 = v.reshape(-1, 3)
        out = np.einsum("ij,ijk->ik", self.bary, v3[self.nodes])
        return out.ravel()

    def apply_Ct(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.size != 3 * self.m:
            raise DimensionMismatch(f"expected {3 * self.m} entries, got {r.size}")
        contrib = self.bary[:, :, None] * r.reshape(-1, 1, 3)  # (m, 3, 3)
        idx = self.nodes.ravel()
        flat = contrib.reshape(-1, 3)
        out = np.empty((self.n_nodes, 3))
        for d in range(3):
            out[:, d] = np.bincount(idx, weights=flat[:, d], minlength=self.n_nodes)
        return out.ravel()

    def write_csv(self, path) -> None:
        rows = ["point_id,triangle_id,lambda1,lambda2,lambda3,distance"]
        for i in range(self.m):
            l1, l2, l3 = self.bary[i]
            rows.append(f"{i},{int(self.triangle_ids[i])},{float(l1)!r},{float(l2)!r},{float(l3)!r},{float(self.distance[i])!r}")
        Path(path).write_text("\n".join(rows) + "\n")


def build_correspondences(surface: SurfaceMesh, deformed_positions: np.ndarray, cloud) -> CorrespondenceSet:
    """Exact closest surface point for every cloud point (tree rebuilt each call)."""
    if len(surface.triangles) == 0:
        raise EmptySurface("surface has no triangles")
    pos = np.asarray(deformed_positions, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pos)):
        raise ValueError("deformed positions contain non-finite values")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    tri_pts = pos[surface.triangles]
    tree = TriangleBVH.build(tri_pts)
    tri, bary, d2 = tree.closest(pts)
    nodes = surface.triangles[tri]
    closest = np.einsum("ij,ijk->ik", bary, pos[nodes])
    return CorrespondenceSet(
        triangle_ids=tri,
        nodes=nodes,
        bary=bary,
        closest=closest,
        distance=np.sqrt(d2),
        n_nodes=len(pos),
    )

"""Structured tetrahedral meshes used as phantoms and test fixtures.

Meshes are built from a hexahedral node grid with the six-tet Kuhn split
(conforming across shared faces), optionally pushed through a smooth map.
No general-purpose tetrahedralization is attempted here.
"""

from __future__ import annotations

import numpy as np

from .geometry import VolumeMesh

# Kuhn decomposition of the unit cube along the (0,0,0)-(1,1,1) diagonal;
# corner id = x + 2y + 4z.
_KUHN = np.array([
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
])


def grid_tets(shape: tuple[int, int, int]) -> np.ndarray:
    """Tet connectivity for a node grid of ``shape`` (x fastest)."""
    nx, ny, nz = shape
    if min(shape) < 2:
        raise ValueError("grid needs at least 2 nodes per axis")
    i, j, k = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
    base = (i + nx * (j + ny * k)).ravel()
    offs = np.array([dx + nx * (dy + ny * dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)])
    corners = base[:, None] + offs[None, :]
    return corners[:, _KUHN].reshape(-1, 4)


def grid_nodes(shape, lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0)) -> np.ndarray:
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, shape)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    # x fastest, matching grid_tets
    return np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)


def box_mesh(shape=(3, 3, 3), size=(1.0, 1.0, 1.0), jitter: float = 0.0, seed: int = 0) -> VolumeMesh:
    """Box of ``size`` mm with a ``shape`` node grid.

    ``jitter`` moves interior nodes by up to that fraction of the grid
    spacing, giving an irregular mesh with the same connectivity.
    """
    nodes = grid_nodes(shape, upper=size)
    if jitter:
        spacing = np.asarray(size) / (np.asarray(shape) - 1)
        rng = np.random.default_rng(seed)
        idx = np.indices(shape).reshape(3, -1, order="F").T
        interior = np.all((idx > 0) & (idx < np.asarray(shape) - 1), axis=1)
        nodes[interior] += jitter * spacing * rng.uniform(-1, 1, (interior.sum(), 3))
    return VolumeMesh(nodes, grid_tets(shape))


def unit_tet() -> VolumeMesh:
    return VolumeMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]), np.array([[0, 1, 2, 3]]))


def _cube_to_ball(s: np.ndarray) -> np.ndarray:
    x, y, z = s[:, 0], s[:, 1], s[:, 2]
    x2, y2, z2 = x * x, y * y, z * z
    return np.stack([
        x * np.sqrt(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3),
        y * np.sqrt(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3),
        z * np.sqrt(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3),
    ], axis=1)


def ball_mesh(n: int = 9, radius: float = 1.0) -> VolumeMesh:
    """Ball meshed by mapping an ``n^3`` cube grid radially."""
    s = grid_nodes((n, n, n), lower=(-1, -1, -1), upper=(1, 1, 1))
    return VolumeMesh(radius * _cube_to_ball(s), grid_tets((n, n, n)))


def liver_like_mesh(shape=(23, 17, 11), size=(190.0, 150.0, 80.0), roundness: float = 0.75) -> VolumeMesh:
    """Organ-shaped phantom: a rounded, tapered, bent slab in mm.

    The default grid gives 4301 nodes, close to the liver model used for
    the in-silico experiments. The thick lobe sits at -x and thins toward
    +x; the anterior (top, +z) face is domed and the posterior is concave.
    """
    s = grid_nodes(shape, lower=(-1, -1, -1), upper=(1, 1, 1))
    q = (1 - roundness) * s + roundness * _cube_to_ball(s)
    t = (q[:, 0] + 1) / 2  # 0 at the thick lobe, 1 at the thin tip
    a, b, c = (v / 2 for v in size)
    x = a * q[:, 0]
    y = b * q[:, 1] * (1 - 0.35 * t)
    z = c * q[:, 2] * (1 - 0.55 * t)
    z = z + 0.12 * c * (1 - (q[:, 0] ** 2 + q[:, 1] ** 2)) + 0.08 * c * q[:, 1]
    return VolumeMesh(np.stack([x, y, z], axis=1), grid_tets(shape))

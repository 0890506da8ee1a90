"""Mesh and point-cloud data model, file I/O, rigid transforms and cropping.

All coordinates are millimetres. Volume meshes are linear tetrahedra; the
boundary surface is extracted on construction and keeps global node indices,
so a surface triangle ``(i, j, k)`` addresses rows ``i, j, k`` of
``VolumeMesh.nodes`` directly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    EmptyCloud,
    EmptySelection,
    ParseError,
    TopologyError,
    UnsupportedCellType,
)

VTK_TETRA = 10

# Outward faces of a positively oriented tet (a, b, c, d).
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = nodes[tets]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    e3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", np.cross(e1, e2), e3) / 6.0


def triangle_areas(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = positions[triangles]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def bbox_diagonal(points: np.ndarray) -> float:
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


@dataclass(frozen=True)
class SurfaceMesh:
    """Boundary triangles of a volume mesh, indexed into the parent nodes."""

    node_indices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray

    @property
    def n_s(self) -> int:
        return len(self.node_indices)

    def edge_counts(self) -> np.ndarray:
        """Number of boundary triangles sharing each undirected edge."""
        edges = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return counts

    def is_closed_manifold(self) -> bool:
        return bool(np.all(self.edge_counts() == 2))

    def vertex_normals(self, positions: np.ndarray) -> np.ndarray:
        """Area-weighted outward normals per parent node (zero off-surface)."""
        p = positions[self.triangles]
        fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        normals = np.zeros_like(positions, dtype=float)
        for c in range(3):
            np.add.at(normals, self.triangles[:, c], fn)
        norm = np.linalg.norm(normals, axis=1)
        mask = norm > 0
        normals[mask] /= norm[mask, None]
        return normals


def extract_surface(nodes: np.ndarray, tets: np.ndarray) -> SurfaceMesh:
    """Boundary faces: those belonging to exactly one tet, wound outward.

    Assumes tets are positively oriented.
    """
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise TopologyError(f"{int(np.sum(counts > 2))} faces shared by more than two tets")
    triangles = faces[counts[inverse] == 1]
    areas = triangle_areas(nodes, triangles)
    diag = bbox_diagonal(nodes)
    if triangles.size and np.any(areas <= 1e-12 * diag**2):
        raise TopologyError("zero-area boundary triangle")
    return SurfaceMesh(
        node_indices=np.unique(triangles),
        triangles=np.ascontiguousarray(triangles, dtype=np.int64),
        areas=areas,
    )


@dataclass(frozen=True)
class VolumeMesh:
    """Validated tetrahedral mesh.

    Construction reorients inverted tets by swapping two vertices and
    extracts the boundary surface.
    """

    nodes: np.ndarray
    tets: np.ndarray
    surface: SurfaceMesh = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tets = np.array(self.tets, dtype=np.int64, copy=True)
        if nodes.ndim != 2 or nodes.shape[1] != 3 or len(nodes) == 0:
            raise TopologyError("nodes must be a non-empty (n, 3) array")
        if not np.all(np.isfinite(nodes)):
            raise TopologyError("non-finite node coordinate")
        if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
            raise TopologyError("tets must be a non-empty (t, 4) array")
        n = len(nodes)
        if tets.min() < 0 or tets.max() >= n:
            raise TopologyError(f"tet node index out of range [0, {n})")
        st = np.sort(tets, axis=1)
        if np.any(st[:, 1:] == st[:, :-1]):
            raise TopologyError("tet with repeated node index")
        if len(np.unique(st, axis=0)) != len(st):
            raise TopologyError("duplicate tet")
        vol = signed_volumes(nodes, tets)
        if np.any(np.abs(vol) < 1e-12 * bbox_diagonal(nodes) ** 3):
            bad = int(np.argmin(np.abs(vol)))
            raise TopologyError(f"degenerate tet {bad} (volume {vol[bad]:.3e})")
        flip = vol < 0
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
        nodes.setflags(write=False)
        tets.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "tets", tets)
        object.__setattr__(self, "surface", extract_surface(nodes, tets))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        return signed_volumes(self.nodes, self.tets)

    def deformed(self, u: np.ndarray) -> "VolumeMesh":
        return VolumeMesh(self.nodes + np.asarray(u).reshape(-1, 3), self.tets)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyCloud("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ParseError("non-finite point coordinate")
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RigidTransform:
    """``p -> R p + t`` with a proper rotation ``R``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10) or abs(np.linalg.det(R) - 1) > 1e-10:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        R = np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K
        # re-orthonormalize to keep the 1e-10 invariant after rounding
        U, _, Vt = np.linalg.svd(R)
        return cls(U @ Vt, translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def angle(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(math.acos(min(1.0, max(-1.0, c))))

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        if "matrix" in d:
            M = np.asarray(d["matrix"], dtype=float)
            return cls(M[:3, :3], M[:3, 3])
        return cls(d["rotation"], d["translation"])


Geometry = Union[PointCloud, VolumeMesh, np.ndarray]


def apply_rigid(obj: Geometry, T: RigidTransform) -> Geometry:
    if isinstance(obj, PointCloud):
        return PointCloud(T.apply(obj.points), obj.labels)
    if isinstance(obj, VolumeMesh):
        return VolumeMesh(T.apply(obj.nodes), obj.tets)
    return T.apply(obj)


def crop_surface(
    surface: SurfaceMesh,
    deformed_positions: np.ndarray,
    seed_point,
    target_ratio: float,
) -> tuple[PointCloud, float]:
    """Grow a connected triangle patch from the triangle nearest ``seed_point``.

    Frontier triangles (edge-adjacent to the patch) are added in order of
    centroid distance to the seed until the patch area reaches
    ``target_ratio`` of the total deformed surface area. Returns the patch
    vertices at their deformed positions (labels hold the node indices)
    and the achieved area ratio.
    """
    if not target_ratio > 0:
        raise EmptySelection(f"target_ratio must be > 0, got {target_ratio}")
    if target_ratio > 1:
        raise ValueError("target_ratio must be <= 1")
    seed = np.asarray(seed_point, dtype=float)
    if seed.shape != (3,) or not np.all(np.isfinite(seed)):
        raise ValueError("seed_point must be a finite 3-vector")
    pos = np.asarray(deformed_positions, dtype=float).reshape(-1, 3)
    tris = surface.triangles
    areas = triangle_areas(pos, tris)
    total = areas.sum()
    centroid_dist = np.linalg.norm(pos[tris].mean(axis=1) - seed, axis=1)

    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    edges.sort(axis=1)
    owner = np.tile(np.arange(len(tris)), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    same = np.all(edges[1:] == edges[:-1], axis=1)
    neighbours: list[list[int]] = [[] for _ in range(len(tris))]
    for a, b in zip(owner[:-1][same], owner[1:][same]):
        neighbours[a].append(int(b))
        neighbours[b].append(int(a))

    selected = np.zeros(len(tris), dtype=bool)
    queued = np.zeros(len(tris), dtype=bool)
    heap: list[tuple[float, int]] = []
    acc = 0.0
    goal = target_ratio * total
    while acc < goal and not selected.all():
        if not heap:
            # start (or restart, for disconnected surfaces) at nearest free triangle
            free = np.flatnonzero(~selected)
            t0 = int(free[np.argmin(centroid_dist[free])])
            heapq.heappush(heap, (float(centroid_dist[t0]), t0))
            queued[t0] = True
        _, t = heapq.heappop(heap)
        selected[t] = True
        acc += areas[t]
        for nb in neighbours[t]:
            if not queued[nb]:
                queued[nb] = True
                heapq.heappush(heap, (float(centroid_dist[nb]), nb))
    node_ids = np.unique(tris[selected])
    ratio = 1.0 if selected.all() else float(acc / total)
    return PointCloud(pos[node_ids], labels=node_ids), ratio


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _parse_float(tok: str, path) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"{path}: invalid number {tok!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{path}: non-finite value {tok!r}")
    return v


def _parse_int(tok: str, path) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{path}: invalid integer {tok!r}") from None


def _read_vtk(path: Path, text: str) -> VolumeMesh:
    lines = text.splitlines()
    if len(lines) < 4:
        raise ParseError(f"{path}: truncated VTK header")
    if lines[2].strip().upper() != "ASCII":
        raise ParseError(f"{path}: only ASCII legacy VTK is supported")
    tokens = " ".join(lines[3:]).split()
    pos = 0

    def take(k):
        nonlocal pos
        if pos + k > len(tokens):
            raise ParseError(f"{path}: unexpected end of file")
        out = tokens[pos:pos + k]
        pos += k
        return out

    nodes = cells = types = None
    while pos < len(tokens):
        key = take(1)[0].upper()
        if key == "DATASET":
            kind = take(1)[0].upper()
            if kind != "UNSTRUCTURED_GRID":
                raise ParseError(f"{path}: dataset {kind} is not UNSTRUCTURED_GRID")
        elif key == "POINTS":
            n = _parse_int(take(1)[0], path)
            take(1)
            nodes = np.array([_parse_float(t, path) for t in take(3 * n)]).reshape(n, 3)
        elif key == "CELLS":
            nc = _parse_int(take(1)[0], path)
            size = _parse_int(take(1)[0], path)
            raw = [_parse_int(t, path) for t in take(size)]
            cells, i = [], 0
            for _ in range(nc):
                k = raw[i]
                cells.append(raw[i + 1:i + 1 + k])
                i += k + 1
        elif key == "CELL_TYPES":
            nc = _parse_int(take(1)[0], path)
            types = [_parse_int(t, path) for t in take(nc)]
        elif key in ("POINT_DATA", "CELL_DATA"):
            break
        else:
            raise ParseError(f"{path}: unexpected keyword {key!r}")
    if nodes is None or cells is None:
        raise ParseError(f"{path}: missing POINTS or CELLS section")
    if types is None:
        types = [VTK_TETRA if len(c) == 4 else -1 for c in cells]
    bad = sorted({t for t in types if t != VTK_TETRA})
    if bad:
        raise UnsupportedCellType(f"{path}: cell types {bad} (only tetrahedra, type 10)")
    if any(len(c) != 4 for c in cells):
        raise ParseError(f"{path}: tetra cell without 4 indices")
    return VolumeMesh(nodes, np.array(cells, dtype=np.int64).reshape(-1, 4))


def _read_native(path: Path, text: str) -> VolumeMesh:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0].strip() != "tetmesh v1":
        raise ParseError(f"{path}: missing 'tetmesh v1' header")
    head = lines[1].split() if len(lines) > 1 else []
    if len(head) != 2:
        raise ParseError(f"{path}: expected '<n> <num_tets>' on line 2")
    n, nt = _parse_int(head[0], path), _parse_int(head[1], path)
    body = lines[2:]
    if len(body) != n + nt:
        raise ParseError(f"{path}: expected {n + nt} data lines, found {len(body)}")
    nodes = np.empty((n, 3))
    for i, ln in enumerate(body[:n]):
        parts = ln.split()
        if len(parts) != 3:
            raise ParseError(f"{path}: node line {i} needs 3 values")
        nodes[i] = [_parse_float(t, path) for t in parts]
    tets = np.empty((nt, 4), dtype=np.int64)
    for i, ln in enumerate(body[n:]):
        parts = ln.split()
        if len(parts) != 4:
            raise ParseError(f"{path}: tet line {i} needs 4 indices")
        tets[i] = [_parse_int(t, path) for t in parts]
    return VolumeMesh(nodes, tets)


def load_volume_mesh(path) -> VolumeMesh:
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError:
        raise ParseError(f"{path}: not a text file (binary VTK is unsupported)") from None
    first = text.lstrip().split("\n", 1)[0].strip()
    if first.lower().startswith("# vtk"):
        return _read_vtk(path, text)
    if first == "tetmesh v1":
        return _read_native(path, text)
    raise ParseError(f"{path}: unrecognised mesh format")


def _fmt(v: float) -> str:
    return repr(float(v))


def save_volume_mesh(path, mesh: VolumeMesh, fmt: Optional[str] = None) -> None:
    """Write ``mesh`` as legacy VTK (``.vtk``) or the native text format."""
    path = Path(path)
    fmt = fmt or ("vtk" if path.suffix.lower() == ".vtk" else "native")
    out = []
    if fmt == "vtk":
        out += ["# vtk DataFile Version 3.0", "forcereg tetrahedral mesh", "ASCII",
                "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n} double"]
        out += [" ".join(_fmt(c) for c in p) for p in mesh.nodes]
        out.append(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}")
        out += ["4 " + " ".join(str(int(i)) for i in t) for t in mesh.tets]
        out.append(f"CELL_TYPES {mesh.n_tets}")
        out += [str(VTK_TETRA)] * mesh.n_tets
    elif fmt == "native":
        out += ["tetmesh v1", f"{mesh.n} {mesh.n_tets}"]
        out += [" ".join(_fmt(c) for c in p) for p in mesh.nodes]
        out += [" ".join(str(int(i)) for i in t) for t in mesh.tets]
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")
    path.write_text("\n".join(out) + "\n")


def load_point_cloud(path) -> PointCloud:
    path = Path(path)
    suffix = path.suffix.lower()
    lines = path.read_text().splitlines()
    if suffix == ".ply":
        if not lines or lines[0].strip() != "ply":
            raise ParseError(f"{path}: missing 'ply' magic")
        n_vert, props, end = None, [], None
        in_vertex = False
        for i, ln in enumerate(lines):
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise ParseError(f"{path}: only ascii PLY is supported")
            if parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    n_vert = _parse_int(parts[2], path)
            elif parts[0] == "property" and in_vertex:
                props.append(parts[-1])
            elif parts[0] == "end_header":
                end = i
                break
        if end is None or n_vert is None:
            raise ParseError(f"{path}: malformed PLY header")
        try:
            cols = [props.index(c) for c in "xyz"]
        except ValueError:
            raise ParseError(f"{path}: PLY vertex lacks x/y/z") from None
        rows = lines[end + 1:end + 1 + n_vert]
        if len(rows) != n_vert:
            raise ParseError(f"{path}: expected {n_vert} vertices")
        pts = [[_parse_float(r.split()[c], path) for c in cols] for r in rows]
    elif suffix == ".csv":
        if not lines:
            raise EmptyCloud(f"{path}: empty file")
        header = [h.strip().lower() for h in lines[0].split(",")]
        try:
            cols = [header.index(c) for c in "xyz"]
        except ValueError:
            raise ParseError(f"{path}: CSV header must contain x,y,z") from None
        pts = []
        for ln in lines[1:]:
            if ln.strip():
                parts = ln.split(",")
                if len(parts) != len(header):
                    raise ParseError(f"{path}: ragged CSV row {ln!r}")
                pts.append([_parse_float(parts[c], path) for c in cols])
    else:
        pts = []
        for ln in lines:
            parts = ln.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 3:
                raise ParseError(f"{path}: XYZ line needs 3 values: {ln!r}")
            pts.append([_parse_float(t, path) for t in parts[:3]])
    if not pts:
        raise EmptyCloud(f"{path}: no points")
    return PointCloud(np.array(pts, dtype=float))


def save_point_cloud(path, cloud: Union[PointCloud, np.ndarray]) -> None:
    path = Path(path)
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    suffix = path.suffix.lower()
    rows = [" ".join(_fmt(c) for c in p) for p in pts]
    if suffix == ".ply":
        head = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
                "property double x", "property double y", "property double z", "end_header"]
        text = "\n".join(head + rows)
    elif suffix == ".csv":
        text = "\n".join(["x,y,z"] + [r.replace(" ", ",") for r in rows])
    else:
        text = "\n".join(rows)
    path.write_text(text + "\n")

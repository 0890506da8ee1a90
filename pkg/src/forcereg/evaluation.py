"""Registration error metrics and run summaries.

Errors are Euclidean distances between observed deformed target positions
and the estimated mapping of their undeformed positions. The mapping is a
rigid transform composed with the registered displacement field, which is
interpolated from mesh nodes to off-node targets.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyTargets, ParseError
from .geometry import RigidTransform

COINCIDENT = 1e-9

FIDUCIAL_HEADER = ["label", "x_pre", "y_pre", "z_pre", "x_post", "y_post", "z_post"]


@dataclass(frozen=True)
class TargetSet:
    pre: np.ndarray
    post: np.ndarray
    labels: Optional[list] = None

    def __post_init__(self):
        pre = np.asarray(self.pre, dtype=float).reshape(-1, 3)
        post = np.asarray(self.post, dtype=float).reshape(-1, 3)
        if pre.shape != post.shape:
            raise ValueError("pre and post target counts differ")
        if not (np.all(np.isfinite(pre)) and np.all(np.isfinite(post))):
            raise ValueError("non-finite target coordinate")
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)

    def __len__(self):
        return len(self.pre)


@dataclass
class EvalReport:
    errors: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.errors)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors))  # population std

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    def summary(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std, "max": self.max, "median": self.median}

    def format_line(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f} ({self.max:.2f})"

    def to_json(self) -> str:
        return json.dumps({"metadata": self.metadata, "summary": self.summary(),
                           "errors": [float(e) for e in self.errors]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(np.asarray(d["errors"], dtype=float), d.get("metadata", {}))


def interpolate_displacements(nodes: np.ndarray, u: np.ndarray, queries: np.ndarray,
                              k: int = 4, mode: str = "idw") -> np.ndarray:
    """Displacements at ``queries`` from the ``k`` nearest mesh nodes.

    ``mode="idw"`` weights the neighbours by inverse distance; ``"nearest"``
    copies the single closest node. A query within 1e-9 of a node takes
    that node's displacement exactly.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    u3 = np.asarray(u, dtype=float).reshape(-1, 3)
    q = np.asarray(queries, dtype=float).reshape(-1, 3)
    tree = cKDTree(nodes)
    if mode == "nearest":
        _, idx = tree.query(q)
        return u3[idx]
    if mode != "idw":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    k = min(k, len(nodes))
    dist, idx = tree.query(q, k=k)
    dist = dist.reshape(len(q), k)
    idx = idx.reshape(len(q), k)
    out = np.empty((len(q), 3))
    hit = dist[:, 0] < COINCIDENT
    out[hit] = u3[idx[hit, 0]]
    w = 1.0 / dist[~hit]
    w /= w.sum(axis=1, keepdims=True)
    out[~hit] = np.einsum("ij,ijk->ik", w, u3[idx[~hit]])
    return out


def interpolate_displacement(mesh, u: np.ndarray, query, mode: str = "idw") -> np.ndarray:
    return interpolate_displacements(mesh.nodes, u, np.asarray(query)[None], mode=mode)[0]


def registration_transform(nodes: np.ndarray, u: np.ndarray, rigid: Optional[RigidTransform] = None,
                           mode: str = "idw") -> Callable[[np.ndarray], np.ndarray]:
    """``X -> rigid(X + u(X))`` with ``u`` interpolated from the mesh nodes."""
    rigid = rigid or RigidTransform.identity()

    def W(X):
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return rigid.apply(X + interpolate_displacements(nodes, u, X, mode=mode))

    return W


def compute_errors(targets: TargetSet, W: Callable[[np.ndarray], np.ndarray], metadata: Optional[dict] = None) -> EvalReport:
    if len(targets) == 0:
        raise EmptyTargets("no targets to evaluate")
    mapped = np.asarray(W(targets.pre), dtype=float).reshape(-1, 3)
    errors = np.linalg.norm(targets.post - mapped, axis=1)
    return EvalReport(errors, dict(metadata or {}))


def load_fiducials(path) -> TargetSet:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyTargets(f"{path}: empty fiducial file")
    header = [h.strip() for h in rows[0]]
    if header != FIDUCIAL_HEADER:
        raise ParseError(f"{path}: header must be {','.join(FIDUCIAL_HEADER)}")
    labels, pre, post = [], [], []
    for r in rows[1:]:
        if not r or not "".join(r).strip():
            continue
        if len(r) != 7:
            raise ParseError(f"{path}: fiducial row needs 7 fields: {r}")
        try:
            vals = [float(v) for v in r[1:]]
        except ValueError:
            raise ParseError(f"{path}: bad number in row {r}") from None
        labels.append(r[0].strip())
        pre.append(vals[:3])
        post.append(vals[3:])
    if not labels:
        raise EmptyTargets(f"{path}: no fiducials")
    return TargetSet(np.array(pre), np.array(post), labels)


def visibility_bin(v: float, edges: Sequence[float] = (0.20, 0.28, 0.36, 0.44)) -> str:
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= v < hi:
            return f"{round(lo * 100)}-{round(hi * 100)}%"
    return "other"


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))


def summarize_runs(reports: Iterable[EvalReport], group_by: Sequence[str] = ()) -> list[dict]:
    """Mean, std and median of per-report mean errors, per metadata group."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    groups: dict[tuple, list[float]] = {}
    for r in reports:
        key = tuple(r.metadata.get(g) for g in group_by)
        groups.setdefault(key, []).append(r.mean)
    rows = []
    for key in sorted(groups, key=lambda t: tuple(_sort_key(v) for v in t)):
        means = np.asarray(groups[key])
        row = dict(zip(group_by, key))
        row.update(n=len(means), mean_of_means=float(means.mean()), std_of_means=float(means.std()),
                   median_of_means=float(np.median(means)))
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def format_summary_row(row: dict) -> str:
    return f"{row['mean_of_means']:.2f} ± {row['std_of_means']:.2f} ({row['median_of_means']:.2f})"

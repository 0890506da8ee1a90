"""AABB tree over triangles with exact closest-point queries (numba kernels).

Traversal is sequential and visits the nearer child first; on exact
distance ties the first triangle reached keeps the slot, so results are
deterministic for a given build.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

LEAF_SIZE = 4


@nb.njit(cache=True)
def closest_point_triangle(p, a, b, c):
    """Closest point on triangle abc to p, with barycentric weights (Ericson)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w


@nb.njit(cache=True)
def _build(tri_pts, leaf_size):
    nt = tri_pts.shape[0]
    lo = np.empty((nt, 3))
    hi = np.empty((nt, 3))
    cen = np.empty((nt, 3))
    for t in range(nt):
        for d in range(3):
            m0 = min(tri_pts[t, 0, d], tri_pts[t, 1, d], tri_pts[t, 2, d])
            m1 = max(tri_pts[t, 0, d], tri_pts[t, 1, d], tri_pts[t, 2, d])
            lo[t, d] = m0
            hi[t, d] = m1
            cen[t, d] = (tri_pts[t, 0, d] + tri_pts[t, 1, d] + tri_pts[t, 2, d]) / 3.0
    max_nodes = 2 * nt + 1
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    left = -np.ones(max_nodes, dtype=np.int64)
    right = -np.ones(max_nodes, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    order = np.arange(nt)
    stack = np.empty(max_nodes, dtype=np.int64)
    n_nodes = 1
    start[0] = 0
    count[0] = nt
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        k = count[node]
        for d in range(3):
            bmin[node, d] = np.inf
            bmax[node, d] = -np.inf
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for i in range(s, s + k):
            t = order[i]
            for d in range(3):
                bmin[node, d] = min(bmin[node, d], lo[t, d])
                bmax[node, d] = max(bmax[node, d], hi[t, d])
                cmin[d] = min(cmin[d], cen[t, d])
                cmax[d] = max(cmax[d], cen[t, d])
        if k <= leaf_size:
            continue
        ext = cmax - cmin
        axis = 0
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        seg = order[s:s + k].copy()
        keys = np.empty(k)
        for i in range(k):
            keys[i] = cen[seg[i], axis]
        srt = np.argsort(keys, kind="mergesort")
        for i in range(k):
            order[s + i] = seg[srt[i]]
        half = k // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        left[node] = l
        right[node] = r
        start[l] = s
        count[l] = half
        start[r] = s + half
        count[r] = k - half
        stack[sp] = r
        sp += 1
        stack[sp] = l
        sp += 1
    return bmin[:n_nodes], bmax[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


@nb.njit(cache=True)
def _box_dist2(p, bmin, bmax, node):
    d2 = 0.0
    for d in range(3):
        v = p[d]
        if v < bmin[node, d]:
            e = bmin[node, d] - v
            d2 += e * e
        elif v > bmax[node, d]:
            e = v - bmax[node, d]
            d2 += e * e
    return d2


@nb.njit(cache=True)
def _query(points, tri_pts, bmin, bmax, left, right, start, count, order):
    m = points.shape[0]
    out_tri = np.empty(m, dtype=np.int64)
    out_bary = np.empty((m, 3))
    out_d2 = np.empty(m)
    stack = np.empty(2 * bmin.shape[0] + 2, dtype=np.int64)
    for q in range(m):
        p = points[q]
        best = np.inf
        best_t = -1
        b0 = 0.0
        b1 = 0.0
        b2 = 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(p, bmin, bmax, node) > best:
                continue
            if left[node] < 0:
                for i in range(start[node], start[node] + count[node]):
                    t = order[i]
                    a = tri_pts[t, 0]
                    b = tri_pts[t, 1]
                    c = tri_pts[t, 2]
                    l0, l1, l2 = closest_point_triangle(p, a, b, c)
                    d2 = 0.0
                    for d in range(3):
                        e = l0 * a[d] + l1 * b[d] + l2 * c[d] - p[d]
                        d2 += e * e
                    if d2 < best or (d2 == best and t < best_t):
                        best = d2
                        best_t = t
                        b0 = l0
                        b1 = l1
                        b2 = l2
            else:
                dl = _box_dist2(p, bmin, bmax, left[node])
                dr = _box_dist2(p, bmin, bmax, right[node])
                # push the farther child first so the nearer one pops next
                if dl <= dr:
                    stack[sp] = right[node]
                    stack[sp + 1] = left[node]
                else:
                    stack[sp] = left[node]
                    stack[sp + 1] = right[node]
                sp += 2
        out_tri[q] = best_t
        out_bary[q, 0] = b0
        out_bary[q, 1] = b1
        out_bary[q, 2] = b2
        out_d2[q] = best
    return out_tri, out_bary, out_d2


@nb.njit(cache=True)
def _brute(points, tri_pts):
    m = points.shape[0]
    out_tri = np.empty(m, dtype=np.int64)
    out_bary = np.empty((m, 3))
    out_d2 = np.empty(m)
    for q in range(m):
        p = points[q]
        best = np.inf
        for t in range(tri_pts.shape[0]):
            a = tri_pts[t, 0]
            b = tri_pts[t, 1]
            c = tri_pts[t, 2]
            l0, l1, l2 = closest_point_triangle(p, a, b, c)
            d2 = 0.0
            for d in range(3):
                e = l0 * a[d] + l1 * b[d] + l2 * c[d] - p[d]
                d2 += e * e
            if d2 < best:
                best = d2
                out_tri[q] = t
                out_bary[q, 0] = l0
                out_bary[q, 1] = l1
                out_bary[q, 2] = l2
        out_d2[q] = best
    return out_tri, out_bary, out_d2


@dataclass(frozen=True)
class TriangleBVH:
    """Binary AABB tree; leaves hold ``order[start:start+count]``."""

    tri_pts: np.ndarray
    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @classmethod
    def build(cls, tri_pts: np.ndarray, leaf_size: int = LEAF_SIZE) -> "TriangleBVH":
        tri_pts = np.ascontiguousarray(tri_pts, dtype=float).reshape(-1, 3, 3)
        return cls(tri_pts, *_build(tri_pts, leaf_size))

    def closest(self, points: np.ndarray):
        """(triangle ids, barycentric weights, squared distances) per point."""
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        return _query(pts, self.tri_pts, self.bmin, self.bmax, self.left, self.right,
                      self.start, self.count, self.order)


def brute_force_closest(points: np.ndarray, tri_pts: np.ndarray):
    """All-triangle scan; reference for the tree query."""
    return _brute(np.ascontiguousarray(points, dtype=float).reshape(-1, 3),
                  np.ascontiguousarray(tri_pts, dtype=float).reshape(-1, 3, 3))

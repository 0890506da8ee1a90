"""Independent reference implementations used by several test modules."""

import numpy as np


def barycentric(X, p):
    """Barycentric coordinates of p in tet X (4, 3)."""
    T = (X[1:] - X[0]).T
    l123 = np.linalg.solve(T, p - X[0])
    return np.concatenate([[1 - l123.sum()], l123])


def quadrature_stiffness(X, lam, mu, h=1e-4):
    """Element stiffness from the bilinear strain energy, tensor form.

    Gradients of the interpolated unit displacement fields are taken by
    central differences of the barycentric interpolant and the energy is
    integrated with the 4-point degree-2 rule.
    """
    X = np.asarray(X, dtype=float)
    vol = abs(np.linalg.det((X[1:] - X[0]).T)) / 6
    a, b = 0.5854101966249685, 0.1381966011250105
    qpts = [a * X[i] + b * (X.sum(axis=0) - X[i]) for i in range(4)]
    weights = np.full(4, vol / 4)

    def grad_field(dof, p):
        node, comp = divmod(dof, 3)
        G = np.zeros((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            d = (barycentric(X, p + e)[node] - barycentric(X, p - e)[node]) / (2 * h)
            G[comp, j] = d
        return G

    K = np.zeros((12, 12))
    for p, w in zip(qpts, weights):
        eps = []
        for i in range(12):
            G = grad_field(i, p)
            eps.append(0.5 * (G + G.T))
        for i in range(12):
            sig = lam * np.trace(eps[i]) * np.eye(3) + 2 * mu * eps[i]
            for j in range(12):
                K[i, j] += w * np.tensordot(sig, eps[j])
    return K


def explicit_C(corr, n):
    """Dense 3m x 3n correspondence matrix."""
    C = np.zeros((3 * corr.m, 3 * n))
    for i in range(corr.m):
        for k in range(3):
            for d in range(3):
                C[3 * i + d, 3 * corr.nodes[i, k] + d] += corr.bary[i, k]
    return C


def horn_quaternion(src, dst):
    """Least-squares rotation/translation by Horn's closed-form quaternion method."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    S = (src - cs).T @ (dst - cd)
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    w, V = np.linalg.eigh(N)
    q0, qx, qy, qz = V[:, -1]
    R = np.array([
        [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
    ])
    return R, cd - R @ cs


def affine_field(nodes, A, c):
    return (nodes @ A.T + c).ravel()


def _segment_closest(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...k,...k", p - a, ab) / np.einsum("...k,...k", ab, ab), 0.0, 1.0)
    return a + t[..., None] * ab


def closest_points_numpy(points, tri_pts):
    """Squared distance from every point to every triangle, (m, t), by plane/edge cases."""
    p = np.asarray(points, dtype=float)[:, None, :]
    a, b, c = (tri_pts[None, :, i, :] for i in range(3))
    n = np.cross(b - a, c - a)
    nn = np.einsum("...k,...k", n, n)
    proj = p - (np.einsum("...k,...k", p - a, n) / nn)[..., None] * n

    def side(u, v):
        return np.einsum("...k,...k", np.cross(v - u, proj - u), n)

    inside = (side(a, b) >= 0) & (side(b, c) >= 0) & (side(c, a) >= 0)
    best = np.where(inside, np.einsum("...k,...k", p - proj, p - proj), np.inf)
    for u, v in ((a, b), (b, c), (c, a)):
        q = _segment_closest(np.broadcast_to(p, proj.shape), np.broadcast_to(u, proj.shape),
                             np.broadcast_to(v, proj.shape))
        best = np.minimum(best, np.einsum("...k,...k", p - q, p - q))
    return best


def dense_sample_distance(p, tri, k=300):
    """Min distance from p to a k-per-edge barycentric sample grid of tri, plus grid spacing."""
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    l1, l2 = i[keep] / k, j[keep] / k
    pts = (1 - l1 - l2)[:, None] * tri[0] + l1[:, None] * tri[1] + l2[:, None] * tri[2]
    spacing = max(np.linalg.norm(tri[1] - tri[0]), np.linalg.norm(tri[2] - tri[0]),
                  np.linalg.norm(tri[2] - tri[1])) / k
    return np.sqrt(((pts - p) ** 2).sum(axis=1).min()), spacing

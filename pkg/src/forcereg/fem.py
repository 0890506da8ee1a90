"""Linear-elastic P1 tetrahedral finite elements.

DOF layout is node-major: ``[u0x, u0y, u0z, u1x, ...]``. The stiffness
assembled here is singular (six rigid modes); ``stabilize`` adds the soft
spring ``k_ss`` to every diagonal entry so the system can be factorized
without boundary conditions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .cholesky import BandedCholesky
from .errors import DegenerateElement, DimensionMismatch
from .geometry import VolumeMesh, bbox_diagonal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElasticMaterial:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.49

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")

    @property
    def lame_lambda(self) -> float:
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E * nu / ((1 + nu) * (1 - 2 * nu))

    @property
    def lame_mu(self) -> float:
        return self.youngs_modulus / (2 * (1 + self.poisson_ratio))

    def elasticity_matrix(self) -> np.ndarray:
        """6x6 Voigt matrix, strain order (xx, yy, zz, yz, xz, xy), engineering shear."""
        lam, mu = self.lame_lambda, self.lame_mu
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[[0, 1, 2], [0, 1, 2]] += 2 * mu
        D[[3, 4, 5], [3, 4, 5]] = mu
        return D


def _strain_displacement(coords: np.ndarray):
    """B matrices (t, 6, 12) and volumes (t,) for a batch of tets (t, 4, 3)."""
    ones = np.ones(coords.shape[:2] + (1,))
    M = np.concatenate([ones, coords], axis=2)  # rows [1, x, y, z]
    vol = np.linalg.det(M) / 6.0
    if np.any(vol == 0):
        raise DegenerateElement("tet with zero volume", tet_index=int(np.flatnonzero(vol == 0)[0]))
    grads = np.linalg.inv(M)[:, 1:, :]  # (t, 3, 4): d N_a / d x_i
    t = len(coords)
    B = np.zeros((t, 6, 12))
    for a in range(4):
        dx, dy, dz = grads[:, 0, a], grads[:, 1, a], grads[:, 2, a]
        c = 3 * a
        B[:, 0, c] = dx
        B[:, 1, c + 1] = dy
        B[:, 2, c + 2] = dz
        B[:, 3, c + 1] = dz
        B[:, 3, c + 2] = dy
        B[:, 4, c] = dz
        B[:, 4, c + 2] = dx
        B[:, 5, c] = dy
        B[:, 5, c + 1] = dx
    return B, vol


def element_stiffness_batch(coords: np.ndarray, material: ElasticMaterial, min_volume: float = 0.0) -> np.ndarray:
    coords = np.asarray(coords, dtype=float).reshape(-1, 4, 3)
    B, vol = _strain_displacement(coords)
    bad = np.flatnonzero(vol <= min_volume)
    if len(bad):
        raise DegenerateElement(f"tet {bad[0]} has volume {vol[bad[0]]:.3e}", tet_index=int(bad[0]))
    D = material.elasticity_matrix()
    Ke = vol[:, None, None] * (B.transpose(0, 2, 1) @ (D @ B))
    return 0.5 * (Ke + Ke.transpose(0, 2, 1))


def element_stiffness(tet_nodes, material: ElasticMaterial) -> np.ndarray:
    """12x12 constant-strain tetrahedron stiffness ``V Bᵀ D B``."""
    X = np.asarray(tet_nodes, dtype=float).reshape(4, 3)
    return element_stiffness_batch(X[None], material, min_volume=1e-12 * bbox_diagonal(X) ** 3)[0]


def assemble(mesh: VolumeMesh, material: ElasticMaterial) -> sp.csr_matrix:
    """Raw global stiffness (3n x 3n CSR), no constraints or soft springs."""
    min_vol = 1e-12 * bbox_diagonal(mesh.nodes) ** 3
    Ke = element_stiffness_batch(mesh.nodes[mesh.tets], material, min_volume=min_vol)
    dofs = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(-1, 12)
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    keep = rows <= cols
    n3 = 3 * mesh.n
    U = sp.coo_matrix((Ke.ravel()[keep], (rows[keep], cols[keep])), shape=(n3, n3)).tocsr()
    U.sum_duplicates()
    # mirror the strict upper triangle so K is exactly symmetric
    return sp.csr_matrix(U + sp.triu(U, k=1).T)


def penalize(K: sp.spmatrix, nodes: Sequence[int], stiffness: float) -> sp.csr_matrix:
    """Add a stiff spring to every DOF of ``nodes`` (penalty Dirichlet)."""
    d = np.zeros(K.shape[0])
    nodes = np.asarray(nodes, dtype=np.int64)
    d[(3 * nodes[:, None] + np.arange(3)).ravel()] = stiffness
    return sp.csr_matrix(K + sp.diags(d))


class StiffnessSystem:
    """Stabilized stiffness ``K' = K + k_ss I`` with a cached factorization.

    Immutable after construction; ``solve`` and ``solve_adjoint`` may be
    called concurrently.
    """

    def __init__(self, K: sp.spmatrix, k_ss: float, material: Optional[ElasticMaterial] = None,
                 mesh_ref: Optional[str] = None, raw: Optional[sp.spmatrix] = None):
        self.K = sp.csr_matrix(K)
        self.raw = raw
        self.k_ss = float(k_ss)
        self.material = material
        self.mesh_ref = mesh_ref
        self.n_dofs = self.K.shape[0]
        self._chol = BandedCholesky(self.K)
        logger.debug("factorized %d dofs, bandwidth %d", self.n_dofs, self._chol.bandwidth)

    def solve(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.n_dofs,):
            raise DimensionMismatch(f"force vector has shape {f.shape}, expected ({self.n_dofs},)")
        return self._chol.solve(f)

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        # K' is symmetric, so the adjoint solve is the forward solve.
        return self.solve(rhs)

    def tangent_at(self, u: np.ndarray) -> sp.csr_matrix:
        """Tangent stiffness at ``u``; constant for the linear material."""
        return self.K


def stabilize(K: sp.spmatrix, k_ss: float, material: Optional[ElasticMaterial] = None,
              mesh_ref: Optional[str] = None, relative: bool = False) -> StiffnessSystem:
    """Add the soft spring ``k_ss`` to the diagonal and factorize.

    With ``relative=True`` the spring is ``k_ss * mean(diag K)`` so the
    default stays meaningful for physical Young's moduli.
    """
    if k_ss < 0:
        raise ValueError("k_ss must be non-negative")
    shift = k_ss * float(K.diagonal().mean()) if relative else k_ss
    Kp = sp.csr_matrix(K + shift * sp.identity(K.shape[0], format="csr"))
    return StiffnessSystem(Kp, shift, material=material, mesh_ref=mesh_ref, raw=K)


def build_system(mesh: VolumeMesh, material: ElasticMaterial, k_ss: float,
                 fixed_nodes: Optional[Sequence[int]] = None, fixed_penalty: float = 1e6,
                 relative: bool = False) -> StiffnessSystem:
    """Assemble, optionally pin ``fixed_nodes`` with penalty springs, stabilize.

    The penalty is ``fixed_penalty * max(diag K)``.
    """
    K = assemble(mesh, material)
    if fixed_nodes is not None and len(fixed_nodes):
        K = penalize(K, fixed_nodes, fixed_penalty * float(K.diagonal().max()))
    return stabilize(K, k_ss, material=material, mesh_ref=f"{mesh.n}n{mesh.n_tets}t", relative=relative)


def write_matrix_market(path, K: sp.spmatrix) -> None:
    """Debug dump of the lower triangle as a symmetric Matrix-Market file."""
    L = sp.tril(K).tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        fh.write(f"{K.shape[0]} {K.shape[1]} {L.nnz}\n")
        for i, j, v in zip(L.row, L.col, L.data):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")

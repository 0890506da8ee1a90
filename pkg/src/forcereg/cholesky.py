"""Sparse SPD factorization: reverse Cuthill-McKee ordering + banded LLᵀ.

The ordering is the fill-reducing step (fill is confined to the envelope);
the factorization and triangular solves are LAPACK ``pbtrf``/``pbtrs`` via
scipy. Mesh stiffness matrices have a narrow envelope after RCM, so the
band storage stays small.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import DimensionMismatch, FactorizationError

# A pivot this small relative to its original diagonal entry means the
# matrix is singular to working precision.
_PIVOT_RTOL = 1e-10


class BandedCholesky:
    def __init__(self, A: sp.spmatrix):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"matrix must be square, got {A.shape}")
        self.n = n
        self.perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
        P = A[self.perm][:, self.perm].tocoo()
        upper = P.row <= P.col
        rows, cols, vals = P.row[upper], P.col[upper], P.data[upper]
        self.bandwidth = int((cols - rows).max()) if len(rows) else 0
        band = np.zeros((self.bandwidth + 1, n))
        band[self.bandwidth + rows - cols, cols] = vals
        diag = band[self.bandwidth].copy()
        if np.any(diag <= 0):
            raise FactorizationError("non-positive diagonal entry; matrix is not SPD")
        try:
            self._factor = cholesky_banded(band, lower=False, check_finite=True)
        except LinAlgError as exc:
            raise FactorizationError(f"Cholesky failed: {exc}") from None
        pivots = self._factor[self.bandwidth] ** 2
        worst = int(np.argmin(pivots / diag))
        if pivots[worst] < _PIVOT_RTOL * diag[worst]:
            raise FactorizationError(
                f"matrix is numerically singular (pivot {pivots[worst]:.3e} vs diagonal {diag[worst]:.3e})"
            )
        self._iperm = np.empty_like(self.perm)
        self._iperm[self.perm] = np.arange(n)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {b.shape[0]} rows, expected {self.n}")
        x = cho_solve_banded((self._factor, False), b[self.perm], check_finite=False)
        return x[self._iperm]

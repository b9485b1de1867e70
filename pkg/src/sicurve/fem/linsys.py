"""Sparse symmetric systems with a reusable factorization."""

from __future__ import annotations

import logging

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from cvxopt import cholmod, matrix as _dense, spmatrix as _cvsparse

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class AssemblyError(RuntimeError):
    pass


class NotPositiveDefiniteError(RuntimeError):
    pass


def check_symmetry(A: sp.spmatrix, rtol: float = 1e-12) -> float:
    """Max asymmetry relative to the largest entry magnitude."""
    d = abs(A - A.T)
    dev = d.max() if d.nnz else 0.0
    scale = abs(A).max()
    rel = dev / scale if scale > 0 else 0.0
    if rel > rtol:
        raise AssemblyError(f"matrix asymmetry {rel:.3e} exceeds {rtol:.1e}")
    return rel


class CholeskyFactor:
    """Sparse Cholesky of an SPD matrix (CHOLMOD).

    Raises NotPositiveDefiniteError if a non-positive pivot appears.
    """

    def __init__(self, matrix: sp.spmatrix):
        A = matrix.tocoo()
        n = A.shape[0]
        lower = A.row >= A.col
        self._A = _cvsparse(
            A.data[lower], A.row[lower].astype(int), A.col[lower].astype(int), (n, n)
        )
        self.n = n
        try:
            self._factor = cholmod.symbolic(self._A)
            cholmod.numeric(self._A, self._factor)
        except ArithmeticError as err:
            raise NotPositiveDefiniteError(
                f"non-positive pivot during Cholesky: {err}"
            ) from err

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = _dense(np.ascontiguousarray(b, dtype=np.float64))
        cholmod.solve(self._factor, x)
        return np.asarray(x).ravel()


class LinearSystem:
    """Sparse symmetric matrix with pinned degrees of freedom.

    Pinned dofs get a unit diagonal and zeroed row/column (kept symmetric);
    their solution values are forced to zero.  Factorization is deferred to
    the first solve: Cholesky is attempted first, and an indefinite matrix
    falls back to an LU factorization with a logged warning.
    """

    def __init__(self, matrix: sp.spmatrix, dof_map: dict, pinned=()):
        matrix = matrix.tocsr()
        pinned = np.asarray(sorted(pinned), dtype=np.int64)
        if len(pinned):
            n = matrix.shape[0]
            mask = np.ones(n)
            mask[pinned] = 0.0
            D = sp.diags(mask)
            matrix = D @ matrix @ D + sp.coo_matrix(
                (np.ones(len(pinned)), (pinned, pinned)), shape=matrix.shape
            )
        self.matrix = matrix.tocsc()
        self.dof_map = dof_map
        self.pinned = pinned
        self.factorization = None
        self._mode = None
        check_symmetry(self.matrix)

    def _factorize(self):
        try:
            chol = CholeskyFactor(self.matrix)
        except NotPositiveDefiniteError as err:
            log.warning("Cholesky hit a non-positive pivot (%s); "
                        "falling back to an indefinite LU factorization", err)
            try:
                lu = spla.splu(self.matrix)
            except RuntimeError as lu_err:
                raise AssemblyError(f"singular system: {lu_err}") from lu_err
            self.factorization = lu.solve
            self._mode = "lu"
        else:
            self.factorization = chol.solve
            self._mode = "cholesky"

    def solve(self, rhs: np.ndarray, check: bool = False) -> np.ndarray:
        if rhs.shape[0] != self.matrix.shape[0]:
            raise SolverError("rhs length does not match system size")
        if self.factorization is None:
            self._factorize()
        b = rhs.copy()
        if len(self.pinned):
            b[self.pinned] = 0.0
        x = self.factorization(b)
        if self._mode == "lu":
            # one step of iterative refinement guards threshold pivoting
            r = b - self.matrix @ x
            x += self.factorization(r)
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution (factorization breakdown)")
        if check:
            nb = np.linalg.norm(b)
            if nb > 0:
                rel = np.linalg.norm(b - self.matrix @ x) / nb
                if rel > 1e-10:
                    raise SolverError(f"solve residual {rel:.3e} exceeds 1e-10")
        return x

    def dump_matrix_market(self, path: str):
        scipy.io.mmwrite(path, self.matrix.tocoo())

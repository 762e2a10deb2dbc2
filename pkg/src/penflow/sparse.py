"""Sparse matrix assembly support and the direct linear solver.

The sparsity pattern of an element-based matrix is fixed by the mesh, so it
is computed once: :func:`element_pattern` maps every (element, local row,
local col) entry to its position in a shared CSR structure, and per-step
assembly is a single weighted bincount into that structure.  Linear systems
are solved by sparse LU factorization with a fill-reducing column ordering;
every solve reports its relative residual instead of trusting the
factorization blindly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass(frozen=True)
class CsrPattern:
    """Fixed CSR sparsity pattern plus the element-entry scatter map.

    Attributes
    ----------
    n : int
        Matrix dimension.
    indptr, indices : ndarray
        CSR structure arrays (column indices sorted within each row).
    entry_map : (n_elements * k * k,) int ndarray
        Position in the CSR data array of each local matrix entry, in
        ``local.ravel()`` order.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    entry_map: np.ndarray

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum local element matrices (n_elements, k, k) into a CSR matrix."""
        data = np.bincount(self.entry_map, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def element_pattern(element_dofs: np.ndarray, n: int) -> CsrPattern:
    """Union of dense k-by-k couplings of each element's dofs.

    Parameters
    ----------
    element_dofs : (n_elements, k) int ndarray
        Global dof indices of each element.
    n : int
        Matrix dimension.
    """
    k = element_dofs.shape[1]
    rows = np.repeat(element_dofs, k, axis=1).ravel()
    cols = np.tile(element_dofs, (1, k)).ravel()
    keys = rows * np.int64(n) + cols
    unique, inverse = np.unique(keys, return_inverse=True)
    indices = (unique % n).astype(np.int32)
    row_of = (unique // n).astype(np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, row_of + 1, 1)
    np.cumsum(indptr, out=indptr)
    return CsrPattern(n=n, indptr=indptr, indices=indices, entry_map=inverse)


def symbolic_pattern(mesh, layout) -> sp.csr_matrix:
    """All-zero matrix holding the coupled velocity-dof sparsity pattern."""
    from .fem import tri_vector_dofs

    n = layout.n_total
    pat = element_pattern(tri_vector_dofs(mesh), n)
    data = np.zeros(pat.nnz)
    return sp.csr_matrix((data, pat.indices, pat.indptr), shape=(n, n))


def scatter_add(A: sp.csr_matrix, rows: np.ndarray, cols: np.ndarray, local: np.ndarray) -> None:
    """Add one element's local matrix into ``A`` in place.

    Every (row, col) pair must already exist in the sparsity pattern;
    a missing entry raises ``KeyError`` rather than silently reallocating.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    local = np.asarray(local)
    for i, r in enumerate(rows):
        start, stop = A.indptr[r], A.indptr[r + 1]
        row_cols = A.indices[start:stop]
        pos = np.searchsorted(row_cols, cols)
        if np.any(pos >= row_cols.shape[0]) or np.any(row_cols[np.minimum(pos, row_cols.shape[0] - 1)] != cols):
            missing = cols[(pos >= row_cols.shape[0]) | (row_cols[np.minimum(pos, row_cols.shape[0] - 1)] != cols)]
            raise KeyError(f"entry ({int(r)}, {int(missing[0])}) not in sparsity pattern")
        A.data[start + pos] += local[i]


@dataclass(frozen=True)
class LinearSolveReport:
    """Outcome of one sparse direct solve.

    ``success`` is true when the factorization succeeded and the relative
    residual ``|A x - b| / |b|`` is at most ``tol`` (absolute residual when
    ``b`` is zero).
    """

    residual: float
    rel_residual: float
    success: bool
    n: int
    factor_nnz: int


def solve(A: sp.csr_matrix, b: np.ndarray, tol: float = 1e-10):
    """Solve ``A x = b`` by sparse LU with a COLAMD column ordering.

    Returns
    -------
    x : ndarray or None
        Solution vector, or ``None`` when the factorization itself failed.
    report : LinearSolveReport
    """
    n = A.shape[0]
    bnorm = float(np.linalg.norm(b))
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        factor_nnz = int(lu.nnz)
    except RuntimeError:
        return None, LinearSolveReport(
            residual=float("inf"), rel_residual=float("inf"), success=False, n=n, factor_nnz=0
        )
    if not np.all(np.isfinite(x)):
        return None, LinearSolveReport(
            residual=float("inf"), rel_residual=float("inf"), success=False, n=n, factor_nnz=factor_nnz
        )
    residual = float(np.linalg.norm(A @ x - b))
    rel = residual / bnorm if bnorm > 0.0 else residual
    return x, LinearSolveReport(
        residual=residual, rel_residual=rel, success=rel <= tol, n=n, factor_nnz=factor_nnz
    )


def dump_matrix_market(A: sp.spmatrix, path) -> None:
    """Write ``A`` in MatrixMarket coordinate format (debugging aid)."""
    scipy.io.mmwrite(path, sp.coo_matrix(A))

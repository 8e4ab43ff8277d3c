"""
Sparse factorization with a reusable ordering, plus submatrix extraction
that preserves explicit zeros.
"""

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

__all__ = [
    'ConditioningError',
    'StabilityError',
    'DivergenceError',
    'SparseFactorization',
    'SubmatrixExtractor',
    'PIVOT_RTOL',
]

PIVOT_RTOL = 1e-12


class ConditioningError(np.linalg.LinAlgError):
    """Near-zero pivot; usually an under-constrained quasistatic region."""

    def __init__(self, pivot, index, scale):
        self.pivot = pivot
        self.index = index
        super().__init__(f'near-zero pivot {pivot:.3e} at dof {index} '
                         f'(scale {scale:.3e}); is a quasistatic region unconstrained?')


class StabilityError(np.linalg.LinAlgError):
    pass


class DivergenceError(RuntimeError):
    pass


class SparseFactorization:
    """
    LU factorization of matrices sharing one sparsity pattern.

    The symmetric fill-reducing ordering is the symbolic phase: it is
    computed when a new pattern is seen and reused while the pattern stays
    the same. Values are refactored on every :meth:`factorize` call.

    Attributes
    ----------
    n_symbolic : int
        Number of symbolic analyses performed.
    n_numeric : int
        Number of numeric factorizations.
    rhs_solved : int
        Total number of right-hand-side columns solved.
    """

    def __init__(self):
        self.n_symbolic = 0
        self.n_numeric = 0
        self.rhs_solved = 0
        self._indptr = None
        self._indices = None
        self._perm = None
        self._lu = None

    def _same_pattern(self, A):
        if self._indptr is None:
            return False
        if A.indptr is self._indptr and A.indices is self._indices:
            return True
        return (A.shape[0] == self._perm.size
                and np.array_equal(A.indptr, self._indptr)
                and np.array_equal(A.indices, self._indices))

    def analyze(self, A):
        A = sps.csr_matrix(A)
        n = A.shape[0]
        perm = None
        if n:
            # minimum degree on the symmetrized pattern; values do not matter
            # for the ordering, so a unit-valued copy is used
            P = sps.csc_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape).T
            P = P + P.T + sps.identity(n, format='csc') * (2 * n)
            try:
                lu = splu(P.tocsc(), permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
                perm = np.argsort(lu.perm_c)
            except RuntimeError:
                perm = None
        if perm is None:
            perm = reverse_cuthill_mckee(A, symmetric_mode=True)
        self._perm = np.asarray(perm, dtype=np.int64)
        self._indptr, self._indices = A.indptr, A.indices
        self.n_symbolic += 1

    def factorize(self, A):
        if not sps.isspmatrix_csr(A):
            A = sps.csr_matrix(A)
        if not self._same_pattern(A):
            self.analyze(A)
        p = self._perm
        Ap = A[p][:, p].tocsc()
        scale = float(np.abs(A.diagonal()).max()) if A.shape[0] else 1.0
        try:
            lu = splu(Ap, permc_spec='NATURAL', diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            # SuperLU reports an exactly singular factor this way
            raise ConditioningError(0.0, -1, scale) from exc
        piv = np.abs(lu.U.diagonal())
        k = int(np.argmin(piv)) if piv.size else 0
        if piv.size and piv[k] < PIVOT_RTOL * scale:
            raise ConditioningError(float(lu.U.diagonal()[k]), int(p[lu.perm_c[k]]), scale)
        self._lu = lu
        self.n_numeric += 1
        return self

    def solve(self, B):
        B = np.asarray(B, dtype=float)
        ncols = 1 if B.ndim == 1 else B.shape[1]
        self.rhs_solved += ncols
        p = self._perm
        X = np.empty_like(B)
        if B.size:
            X[p] = self._lu.solve(np.ascontiguousarray(B[p]))
        return X


class SubmatrixExtractor:
    """
    Extract ``A[rows][:, cols]`` from CSR matrices with a fixed pattern.

    The submatrix pattern (explicit zeros included) is computed once; later
    extractions only gather values, so the result always shares the same
    ``indptr``/``indices`` arrays.
    """

    def __init__(self, indptr, indices, shape, rows, cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        colmap = np.full(shape[1], -1, dtype=np.int64)
        colmap[cols] = np.arange(cols.size)
        starts, ends = indptr[rows], indptr[rows + 1]
        lengths = ends - starts
        pos = np.repeat(starts - np.cumsum(lengths) + lengths, lengths) + np.arange(lengths.sum())
        newc = colmap[indices[pos]]
        keep = newc >= 0
        r = np.repeat(np.arange(rows.size), lengths)[keep]
        self.take = pos[keep]
        self.indices = newc[keep].astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(rows.size + 1)).astype(np.int32)
        self.shape = (rows.size, cols.size)
        # keep row-sorted column order canonical
        order = np.lexsort((self.indices, r))
        self.take, self.indices = self.take[order], self.indices[order]
        self.rows_of_data = r[order]

    def __call__(self, A):
        return sps.csr_matrix((A.data[self.take], self.indices, self.indptr),
                              shape=self.shape, copy=False)

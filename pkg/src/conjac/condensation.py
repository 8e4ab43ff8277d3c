"""
Velocity-level condensation.

Quasistatic nodes keep zero net force under the linearized force model, so
their velocities follow the dynamic ones through

    v_q = J_qd v_d + b_q,   J_qd = -K_qq^-1 K_qd,   b_q = -(1/h) K_qq^-1 f_q

where ``b_q`` is only applied to positions. Fixed (Dirichlet) nodes are
deleted from the system before partitioning. Dirichlet nodes with a
prescribed nonzero velocity add one more right-hand side, ``K_qs v_s``.

All vectors in a :class:`CondensationResult` are expressed on the *free*
degrees of freedom (dynamic and quasistatic nodes, in ascending node order).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .linalg import SparseFactorization, StabilityError, SubmatrixExtractor

__all__ = [
    'NodePartition',
    'CondensationResult',
    'Condenser',
    'condense',
    'condense_adjusted',
    'reduced_system',
    'node_dofs',
]


def _same_pattern(K, ref):
    if ref is None:
        return False
    indices, indptr = ref
    return K.indices is indices or (K.indices.size == indices.size
                                    and np.array_equal(K.indptr, indptr)
                                    and np.array_equal(K.indices, indices))


def node_dofs(nodes):
    nodes = np.asarray(nodes, dtype=np.int64)
    return (3 * nodes[:, None] + np.arange(3)).ravel()


@dataclass(frozen=True, eq=False)
class NodePartition:
    """
    Split of the nodes into fixed, dynamic and quasistatic sets.

    ``representative`` lists the nodes allowed to switch between dynamic and
    quasistatic at runtime; it always contains the dynamic set.
    """
    n_nodes: int
    fixed: np.ndarray
    dynamic: np.ndarray
    quasistatic: np.ndarray
    representative: np.ndarray

    @classmethod
    def build(cls, n_nodes, fixed=(), dynamic=(), representative=None):
        fixed = np.unique(np.asarray(fixed, dtype=np.int64))
        dynamic = np.unique(np.asarray(dynamic, dtype=np.int64))
        if representative is None:
            representative = dynamic
        representative = np.union1d(np.asarray(representative, dtype=np.int64), dynamic)
        for name, s in (('fixed', fixed), ('dynamic', dynamic), ('representative', representative)):
            if s.size and (s.min() < 0 or s.max() >= n_nodes):
                raise ValueError(f'{name} node index out of range [0, {n_nodes})')
        if np.intersect1d(fixed, dynamic).size:
            raise ValueError('a node cannot be both fixed and dynamic')
        quasi = np.setdiff1d(np.arange(n_nodes), np.union1d(fixed, dynamic))
        parts = [fixed, dynamic, quasi, representative]
        for a in parts:
            a.setflags(write=False)
        return cls(int(n_nodes), *parts)

    def with_dynamic(self, dynamic):
        return NodePartition.build(self.n_nodes, self.fixed, dynamic, self.representative)

    def with_fixed(self, fixed):
        dyn = np.setdiff1d(self.dynamic, fixed)
        rep = np.setdiff1d(self.representative, fixed)
        return NodePartition.build(self.n_nodes, fixed, dyn, rep)

    @property
    def n_dynamic(self):
        return self.dynamic.size

    @property
    def free(self):
        return np.union1d(self.dynamic, self.quasistatic)

    def free_dofs(self):
        return node_dofs(self.free)

    def fixed_dofs(self):
        return node_dofs(self.fixed)

    def local_dofs(self):
        """Positions of dynamic and quasistatic dofs inside the free dof list."""
        free = self.free
        d = node_dofs(np.searchsorted(free, self.dynamic))
        q = node_dofs(np.searchsorted(free, self.quasistatic))
        return d, q


@dataclass
class CondensationResult:
    """
    Attributes
    ----------
    jacobian_qd : ndarray, shape (3 n_q, 3 n_d)
    jacobian_full : ndarray, shape (3 n_free, 3 n_d)
        Identity on dynamic rows, ``jacobian_qd`` on quasistatic rows.
    stab : ndarray, shape (3 n_q,)
        Stabilization velocity ``b_q``, m/s.
    offset : ndarray, shape (3 n_free,)
        Velocity of the free dofs induced by prescribed Dirichlet motion.
    dyn_local, quasi_local : ndarray
        Positions of dynamic / quasistatic dofs in the free dof ordering.
    rhs_count : int
        Right-hand sides solved with the quasistatic factorization.
    """
    jacobian_qd: np.ndarray
    jacobian_full: np.ndarray
    stab: np.ndarray
    offset: np.ndarray
    dyn_local: np.ndarray
    quasi_local: np.ndarray
    free_dofs: np.ndarray
    rhs_count: int = 0
    stab_full: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.stab_full is None:
            self.stab_full = np.zeros(self.free_dofs.size)
            self.stab_full[self.quasi_local] = self.stab


class Condenser:
    """
    Stateful condensation with cached patterns and factorizations.

    Two paths are provided. :meth:`condense` slices ``K_qq`` out of the
    stiffness, which needs a new symbolic analysis whenever the partition
    changes. :meth:`condense_adjusted` keeps the full free-dof matrix and
    masks dynamic rows/columns by value, so partition flips never trigger
    reanalysis.
    """

    def __init__(self):
        self.factor_qq = SparseFactorization()
        self.factor_adjusted = SparseFactorization()
        self._qq_key = None
        self._qq_extract = None
        self._free_key = None
        self._free_extract = None
        self.free_diag = None

    @property
    def rhs_solved(self):
        return self.factor_qq.rhs_solved + self.factor_adjusted.rhs_solved

    @property
    def n_symbolic(self):
        return self.factor_qq.n_symbolic + self.factor_adjusted.n_symbolic

    def _extract_pair(self, key, K, rows, cols):
        if self._qq_key is None or self._qq_key[0] != key or not _same_pattern(K, self._qq_key[1]):
            self._qq_extract = SubmatrixExtractor(K.indptr, K.indices, K.shape, rows, cols)
            self._qq_key = (key, (K.indices, K.indptr))
        return self._qq_extract(K)

    def free_matrix(self, K, partition):
        """Stiffness restricted to the free dofs, pattern shared between calls."""
        free = partition.free_dofs()
        key = free.tobytes()
        if self._free_key is None or self._free_key[0] != key or not _same_pattern(K, self._free_key[1]):
            ex = SubmatrixExtractor(K.indptr, K.indices, K.shape, free, free)
            diag = np.empty(free.size, dtype=np.int64)
            cols = ex.indices
            r = ex.rows_of_data
            on_diag = np.flatnonzero(cols == r)
            diag[r[on_diag]] = on_diag
            self._free_extract, self.free_diag = ex, diag
            self._free_key = (key, (K.indices, K.indptr))
        return self._free_extract(K)

    @staticmethod
    def _dirichlet_rhs(K, partition, dirichlet_velocity):
        if dirichlet_velocity is None:
            return None
        w = np.zeros(K.shape[0])
        fd = partition.fixed_dofs()
        w[fd] = np.asarray(dirichlet_velocity, dtype=float).ravel()[fd]
        if not np.any(w):
            return None
        return (K @ w)[partition.free_dofs()]

    def condense(self, K, f, partition: NodePartition, h, dirichlet_velocity=None) -> CondensationResult:
        if h <= 0:
            raise ValueError('time step must be positive')
        free = partition.free_dofs()
        d_loc, q_loc = partition.local_dofs()
        qd = node_dofs(partition.quasistatic)
        dd = node_dofs(partition.dynamic)
        nq, nd = qd.size, dd.size
        f = np.asarray(f, dtype=float).ravel()
        coupling = self._dirichlet_rhs(K, partition, dirichlet_velocity)

        J_qd = np.zeros((nq, nd))
        stab = np.zeros(nq)
        offset = np.zeros(free.size)
        rhs_count = 0
        if nq:
            K_qq = self._extract_pair(qd.tobytes(), K, qd, qd)
            K_qd = K[qd][:, dd].toarray() if nd else np.zeros((nq, 0))
            cols = [K_qd, f[qd][:, None]]
            if coupling is not None:
                cols.append(coupling[q_loc][:, None])
            B = np.hstack(cols)
            X = self.factor_qq.factorize(K_qq).solve(B)
            rhs_count = B.shape[1]
            J_qd = -X[:, :nd]
            stab = -X[:, nd] / h
            if coupling is not None:
                offset[q_loc] = -X[:, nd + 1]

        J = np.zeros((free.size, nd))
        J[d_loc, np.arange(nd)] = 1.0
        J[q_loc] = J_qd
        return CondensationResult(J_qd, J, stab, offset, d_loc, q_loc, free, rhs_count)

    def condense_adjusted(self, K, partition: NodePartition, f, h, dirichlet_velocity=None) -> CondensationResult:
        if h <= 0:
            raise ValueError('time step must be positive')
        K_ff = self.free_matrix(K, partition)
        free = partition.free_dofs()
        d_loc, q_loc = partition.local_dofs()
        nd = d_loc.size
        f = np.asarray(f, dtype=float).ravel()
        coupling = self._dirichlet_rhs(K, partition, dirichlet_velocity)

        is_dyn = np.zeros(free.size, dtype=bool)
        is_dyn[d_loc] = True
        ex = self._free_extract
        # K_qdA: dynamic columns of K with their dynamic rows replaced by I
        K_qdA = np.zeros((free.size, nd))
        if nd:
            col_of = np.full(free.size, -1)
            col_of[d_loc] = np.arange(nd)
            sel = is_dyn[ex.indices]
            K_qdA[ex.rows_of_data[sel], col_of[ex.indices[sel]]] = K_ff.data[sel]
            K_qdA[d_loc] = np.eye(nd)
        # K_A: zero dynamic rows/columns by value, -1 on their diagonal
        data = K_ff.data.copy()
        data[is_dyn[ex.rows_of_data] | is_dyn[ex.indices]] = 0.0
        data[self.free_diag[d_loc]] = -1.0
        K_A = sps.csr_matrix((data, K_ff.indices, K_ff.indptr), shape=K_ff.shape, copy=False)

        f_q = f[free].copy()
        f_q[d_loc] = 0.0
        cols = [K_qdA, f_q[:, None]]
        if coupling is not None:
            c = coupling.copy()
            c[d_loc] = 0.0
            cols.append(c[:, None])
        B = np.hstack(cols)
        X = self.factor_adjusted.factorize(K_A).solve(B) if free.size else B
        J = -X[:, :nd]
        J[d_loc] = np.eye(nd)
        stab_full = -X[:, nd] / h
        stab_full[d_loc] = 0.0
        offset = np.zeros(free.size)
        if coupling is not None:
            offset = -X[:, nd + 1]
            offset[d_loc] = 0.0
        return CondensationResult(J[q_loc], J, stab_full[q_loc], offset, d_loc, q_loc, free,
                                  B.shape[1], stab_full)


def condense(K, f, partition, h, dirichlet_velocity=None, condenser=None):
    """Condensation Jacobian and stabilization by slicing ``K_qq``."""
    return (condenser or Condenser()).condense(K, f, partition, h, dirichlet_velocity)


def condense_adjusted(K, partition, f, h, dirichlet_velocity=None, condenser=None):
    """Same result as :func:`condense`, computed from value-adjusted full-size matrices."""
    return (condenser or Condenser()).condense_adjusted(K, partition, f, h, dirichlet_velocity)


def _system_matrix(mass_diag, K, h, beta):
    return sps.diags(mass_diag) - (beta * h * h) * K


def reduced_system(mass_diag, K, J, v0, f, h, beta, rhs_shift=None):
    """
    Project the linearly implicit system onto the dynamic velocities.

    Returns ``A_r = J^T (M - beta h^2 K) J`` and
    ``rhs = J^T (M v0 + h f - rhs_shift)``. All inputs live on the free dofs;
    ``rhs_shift`` carries the effect of prescribed velocities.

    Raises
    ------
    StabilityError
        If ``A_r`` is not positive definite.
    """
    if beta < 0:
        raise ValueError('beta must be >= 0')
    mass_diag = np.asarray(mass_diag, dtype=float)
    b = mass_diag * np.asarray(v0, dtype=float) + h * np.asarray(f, dtype=float)
    if rhs_shift is not None:
        b = b - rhs_shift
    MJ = mass_diag[:, None] * J - (beta * h * h) * (K @ J)
    A = J.T @ MJ
    A = 0.5 * (A + A.T)
    if A.size:
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise StabilityError('reduced system matrix is not positive definite; '
                                 'try a larger beta') from None
    return A, J.T @ b

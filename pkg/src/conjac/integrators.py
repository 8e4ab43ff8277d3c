"""
Linearly implicit time stepping in the full space and in the condensed
space, plus the optional Newton solve for initial quasistatic positions.

The full-space step solves ``(M - beta h^2 K) v = M v0 + h f``. The
condensed step solves the same system projected by the condensation
Jacobian, maps the dynamic velocities to the quasistatic nodes, and adds
the scaled stabilization velocity to the quasistatic positions only.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .adaptivity import AdaptivityState, RegionMap, element_stretch_rates, region_metrics, update_partition
from .assembly import Assembler
from .condensation import Condenser, NodePartition, node_dofs, reduced_system
from .contact import ContactConfig, contact_energy, friction_filter, penalty_contacts, project_to_subspace
from .linalg import DivergenceError, SparseFactorization, StabilityError, SubmatrixExtractor
from .mesh import TetMesh, lumped_mass

__all__ = [
    'SimState',
    'SolverConfig',
    'Body',
    'StepInfo',
    'VanillaIntegrator',
    'ConJacIntegrator',
    'AdaptiveConJacIntegrator',
    'QuasistaticInitResult',
    'ConvergenceWarning',
    'vanilla_step',
    'conjac_step',
    'quasistatic_init',
    'kinetic_energy',
    'MAX_SPEED',
]

MAX_SPEED = 1e6


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SimState:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    step_index: int = 0

    @classmethod
    def at_rest(cls, mesh: TetMesh, x=None):
        x = mesh.rest_positions.ravel().copy() if x is None else np.asarray(x, dtype=float).ravel().copy()
        return cls(x, np.zeros_like(x))


@dataclass(frozen=True)
class SolverConfig:
    h: float = 5e-3
    beta: float = 0.5
    gamma: float = 1.0 / 3.0
    solver_tol: float = 1e-10
    max_newton_iters: int = 50
    newton_tol: float = 1e-8

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError('h must be > 0')
        if self.beta < 0:
            raise ValueError('beta must be >= 0')
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError('gamma must lie in [0, 1]')


@dataclass
class Body:
    """Mesh, materials, mass and contact settings of one simulated object."""
    mesh: TetMesh
    assembler: Assembler
    mass: np.ndarray
    contact: ContactConfig = None

    @classmethod
    def build(cls, mesh, materials, contact=None):
        return cls(mesh, Assembler(mesh, materials), lumped_mass(mesh).dof_diagonal(), contact)

    def linearize(self, x, external=None):
        """Forces and stiffness at ``x`` including contact springs."""
        sys = self.assembler.assemble(x, external)
        contacts = None
        if self.contact is not None and self.contact.enabled:
            contacts = penalty_contacts(x, self.contact)
            if len(contacts):
                sys.forces.reshape(-1, 3)[contacts.nodes] += contacts.forces
                self.assembler.pattern.add_node_blocks(sys.stiffness.data, contacts.nodes, contacts.blocks)
        return sys.forces, sys.stiffness, contacts

    def potential_energy(self, x, external=None):
        e = self.assembler.energy(x)
        if external is not None:
            e -= float(np.dot(np.asarray(external).ravel(), x))
        if self.contact is not None and self.contact.enabled:
            e += contact_energy(x, self.contact)
        return e


def kinetic_energy(mass_diag, v):
    return 0.5 * float(np.dot(mass_diag, np.asarray(v) ** 2))


@dataclass
class StepInfo:
    timings: dict = field(default_factory=dict)
    residual: float = 0.0
    n_dynamic: int = 0
    rhs_count: int = 0
    n_contacts: int = 0
    metrics: np.ndarray = None


def _dirichlet(state, partition, h, targets):
    """Velocity of fixed dofs and their end-of-step positions."""
    fd = partition.fixed_dofs()
    w = np.zeros_like(state.x)
    x_fix = state.x[fd]
    if targets is not None:
        x_fix = np.asarray(targets, dtype=float).ravel()[fd]
        w[fd] = (x_fix - state.x[fd]) / h
    return w, x_fix


def _check(v, x):
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(x))):
        raise DivergenceError('non-finite state after step')
    speed = float(np.abs(v).max()) if v.size else 0.0
    if speed > MAX_SPEED:
        raise DivergenceError(f'velocity {speed:.3e} m/s exceeds {MAX_SPEED:.0e} m/s')


class _Integrator:
    def __init__(self, body: Body, partition: NodePartition, config: SolverConfig):
        self.body = body
        self.partition = partition
        self.config = config
        self.condenser = Condenser()
        self.last = StepInfo()

    def set_partition(self, partition):
        self.partition = partition

    def _system_matrix(self, K_ff):
        cfg = self.config
        free = self.partition.free_dofs()
        return sps.diags(self.body.mass[free]) - (cfg.beta * cfg.h ** 2) * K_ff

    def _finish(self, state, v, x, info):
        _check(v, x)
        self.last = info
        return SimState(x, v, state.t + self.config.h, state.step_index + 1)


class VanillaIntegrator(_Integrator):
    """Full-space linearly implicit Euler."""

    def __init__(self, body, partition, config):
        super().__init__(body, partition, config)
        self.factor = SparseFactorization()

    def step(self, state: SimState, external=None, targets=None) -> SimState:
        cfg, part, body = self.config, self.partition, self.body
        h = cfg.h
        info = StepInfo(n_dynamic=part.free.size)
        t0 = time.perf_counter()
        f, K, contacts = body.linearize(state.x, external)
        t1 = time.perf_counter()
        free = part.free_dofs()
        w, x_fix = _dirichlet(state, part, h, targets)
        K_ff = self.condenser.free_matrix(K, part)
        data = -(cfg.beta * h * h) * K_ff.data
        data[self.condenser.free_diag] += body.mass[free]
        A = sps.csr_matrix((data, K_ff.indices, K_ff.indptr), shape=K_ff.shape, copy=False)
        rhs = body.mass[free] * state.v[free] + h * f[free]
        if np.any(w):
            rhs += (cfg.beta * h * h) * (K @ w)[free]
        self.factor.factorize(A)
        t2 = time.perf_counter()
        v_f = self.factor.solve(rhs)
        res = np.abs(A @ v_f - rhs).max() if rhs.size else 0.0
        if res > cfg.solver_tol * max(np.abs(rhs).max(), 1e-300):
            raise StabilityError(f'linear solve residual {res:.3e} exceeds tolerance')
        t3 = time.perf_counter()

        v = w.copy()
        v[free] = v_f
        if contacts is not None and len(contacts):
            v = friction_filter(v, contacts, body.contact.mu, state.v)
            v[part.fixed_dofs()] = w[part.fixed_dofs()]
        x = state.x + h * v
        x[part.fixed_dofs()] = x_fix
        t4 = time.perf_counter()
        info.timings = dict(assemble=t1 - t0, factorize=t2 - t1, solve=t3 - t2, update=t4 - t3)
        info.residual = float(np.abs(f[free]).max()) if free.size else 0.0
        info.rhs_count = 1
        info.n_contacts = 0 if contacts is None else len(contacts)
        return self._finish(state, v, x, info)


class ConJacIntegrator(_Integrator):
    """
    Condensed linearly implicit Euler.

    With ``adjusted=True`` the Jacobian is computed from value-adjusted
    full-size matrices so that partition changes reuse the symbolic analysis.
    """

    def __init__(self, body, partition, config, adjusted=False):
        super().__init__(body, partition, config)
        self.adjusted = adjusted

    def step(self, state: SimState, external=None, targets=None) -> SimState:
        cfg, part, body = self.config, self.partition, self.body
        h = cfg.h
        info = StepInfo(n_dynamic=part.n_dynamic)
        t0 = time.perf_counter()
        f, K, contacts = body.linearize(state.x, external)
        t1 = time.perf_counter()
        w, x_fix = _dirichlet(state, part, h, targets)
        wd = w if np.any(w) else None
        if self.adjusted:
            cond = self.condenser.condense_adjusted(K, part, f, h, wd)
        else:
            cond = self.condenser.condense(K, f, part, h, wd)
        t2 = time.perf_counter()

        free = cond.free_dofs
        K_ff = self.condenser.free_matrix(K, part)
        A_full = self._system_matrix(K_ff)
        shift = A_full @ cond.offset
        if wd is not None:
            shift -= (cfg.beta * h * h) * (K @ w)[free]
        A_r, rhs = reduced_system(body.mass[free], K_ff, cond.jacobian_full, state.v[free],
                                  f[free], h, cfg.beta, rhs_shift=shift)
        v_d = np.linalg.solve(A_r, rhs) if rhs.size else np.zeros(0)
        v_free = cond.jacobian_full @ v_d + cond.offset
        if contacts is not None and len(contacts):
            v = w.copy()
            v[free] = v_free
            v_f = friction_filter(v, contacts, body.contact.mu, state.v)[free]
            if rhs.size:
                v_d = project_to_subspace(v_f, cond.jacobian_full, A_full, cond.offset)
                v_free = cond.jacobian_full @ v_d + cond.offset
        t3 = time.perf_counter()

        v = w.copy()
        v[free] = v_free
        x = state.x.copy()
        x[free] += h * (v_free + cfg.gamma * cond.stab_full)
        x[part.fixed_dofs()] = x_fix
        t4 = time.perf_counter()
        info.timings = dict(assemble=t1 - t0, factorize=t2 - t1, solve=t3 - t2, update=t4 - t3)
        q = free[cond.quasi_local]
        info.residual = float(np.abs(f[q]).max()) if q.size else 0.0
        info.rhs_count = cond.rhs_count
        info.n_contacts = 0 if contacts is None else len(contacts)
        self.last_condensation = cond
        return self._finish(state, v, x, info)


class AdaptiveConJacIntegrator(ConJacIntegrator):
    """
    Condensed stepping whose representative nodes switch between dynamic
    and quasistatic from their region's windowed liveliness.
    """

    def __init__(self, body, partition, config, regions: RegionMap, adaptivity: AdaptivityState,
                 always_dynamic=()):
        super().__init__(body, partition, config, adjusted=True)
        self.regions = regions
        self.adaptivity = adaptivity
        self.always_dynamic = np.asarray(always_dynamic, dtype=np.int64)
        self.realized_velocity = None

    def update_dynamic_set(self, state):
        """
        Score every region and flip representatives.

        The stretch rate is taken from the velocity realized over the previous
        step, ``(x - x_prev) / h``. It differs from ``state.v`` on quasistatic
        nodes by the stabilization drift, which is the only motion a region
        has while none of its nodes are dynamic.
        """
        mesh = self.body.mesh
        active = self.body.assembler.active
        v = state.v if self.realized_velocity is None else self.realized_velocity
        sdot = element_stretch_rates(mesh, state.x, v)
        metrics = region_metrics(self.regions, sdot, mesh.rest_volume, active,
                                 weighted=self.adaptivity.weighted)
        region_vol = np.bincount(self.regions.element_to_region[active],
                                 weights=mesh.rest_volume[active], minlength=self.regions.n_regions)
        blocked = (region_vol <= 0) | np.isin(self.regions.representative, self.partition.fixed)
        update_partition(self.adaptivity, metrics, np.flatnonzero(blocked))
        dyn = np.union1d(self.always_dynamic, self.regions.representative[self.adaptivity.active_flags])
        dyn = np.setdiff1d(dyn, self.partition.fixed)
        if not np.array_equal(dyn, self.partition.dynamic):
            self.partition = self.partition.with_dynamic(dyn)
        return metrics

    def step(self, state, external=None, targets=None):
        t0 = time.perf_counter()
        metrics = self.update_dynamic_set(state)
        t_metric = time.perf_counter() - t0
        out = super().step(state, external, targets)
        self.realized_velocity = (out.x - state.x) / self.config.h
        self.last.metrics = metrics
        self.last.timings['assemble'] += t_metric
        return out


def vanilla_step(state, body, partition, config, external=None, targets=None):
    """One full-space step; ``partition`` only needs its fixed set."""
    return VanillaIntegrator(body, partition, config).step(state, external, targets)


def conjac_step(state, body, partition, config, external=None, targets=None, adjusted=False):
    return ConJacIntegrator(body, partition, config, adjusted).step(state, external, targets)


@dataclass
class QuasistaticInitResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def quasistatic_init(body: Body, partition: NodePartition, config: SolverConfig, external=None, x=None):
    """
    Newton iterations on the quasistatic dofs with dynamic and fixed nodes held.

    Each step is ``dx_q = -K_qq^-1 f_q``, halved until the potential energy
    does not increase. Failure to converge only warns.
    """
    mesh = body.mesh
    x = mesh.rest_positions.ravel().copy() if x is None else np.asarray(x, dtype=float).ravel().copy()
    q = node_dofs(partition.quasistatic)
    factor = SparseFactorization()
    extract = None
    it = 0
    res = 0.0
    for it in range(config.max_newton_iters + 1):
        f, K, _ = body.linearize(x, external)
        res = float(np.abs(f[q]).max()) if q.size else 0.0
        if res < config.newton_tol or it == config.max_newton_iters:
            break
        if extract is None:
            extract = SubmatrixExtractor(K.indptr, K.indices, K.shape, q, q)
        dx = -factor.factorize(extract(K)).solve(f[q])
        e0 = body.potential_energy(x, external)
        step = 1.0
        for _ in range(40):
            trial = x.copy()
            trial[q] += step * dx
            if body.potential_energy(trial, external) <= e0 + 1e-12 * abs(e0):
                break
            step *= 0.5
        else:
            warnings.warn('line search failed to decrease the energy', ConvergenceWarning)
            break
        x = trial
    converged = res < config.newton_tol
    if not converged:
        warnings.warn(f'quasistatic initialization stopped at residual {res:.3e} N '
                      f'after {it} iterations', ConvergenceWarning)
    return QuasistaticInitResult(x, it, res, converged)

"""
Penalty contact against an analytic plane, velocity-filter friction and
projection of filtered velocities onto the condensed subspace.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import StabilityError

__all__ = ['ContactConfig', 'Contacts', 'penalty_contacts', 'friction_filter',
           'project_to_subspace', 'contact_energy']


@dataclass(frozen=True)
class ContactConfig:
    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    stiffness: float = 1e3
    alpha: float = 0.1
    mu: float = 0.3
    enabled: bool = True

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,) or not np.isclose(np.linalg.norm(n), 1.0, atol=1e-12):
            raise ValueError('contact normal must be a unit 3-vector')
        if not self.stiffness > 0:
            raise ValueError('contact stiffness must be > 0')
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError('alpha must lie in [0, 1]')
        if self.mu < 0:
            raise ValueError('mu must be >= 0')

    def spring_tensor(self):
        n = np.asarray(self.normal, dtype=float)
        return self.stiffness * ((1.0 - self.alpha) * np.outer(n, n) + self.alpha * np.eye(3))


@dataclass
class Contacts:
    nodes: np.ndarray
    forces: np.ndarray
    blocks: np.ndarray
    surface_points: np.ndarray
    normal: np.ndarray

    def __len__(self):
        return self.nodes.size


def penalty_contacts(x, config: ContactConfig, candidates=None) -> Contacts:
    """
    Springs pulling every penetrating node towards its closest plane point.

    The force is ``K_c ((1 - alpha) n n^T + alpha I) (x_s - x)`` and the
    stiffness block ``-K_c ((1 - alpha) n n^T + alpha I)``, consistent with
    ``stiffness = d forces / d x``. Nodes on the plane are not in contact.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    n = np.asarray(config.normal, dtype=float)
    nodes = np.arange(x.shape[0]) if candidates is None else np.asarray(candidates, dtype=int)
    depth = (np.asarray(config.point) - x[nodes]) @ n
    hit = depth > 0
    nodes, depth = nodes[hit], depth[hit]
    xs = x[nodes] + depth[:, None] * n
    P = config.spring_tensor()
    forces = (xs - x[nodes]) @ P.T
    blocks = np.broadcast_to(-P, (nodes.size, 3, 3)).copy()
    return Contacts(nodes, forces, blocks, xs, n)


def contact_energy(x, config: ContactConfig, candidates=None):
    c = penalty_contacts(x, config, candidates)
    d = np.asarray(x).reshape(-1, 3)[c.nodes] - c.surface_points
    return 0.5 * float(np.einsum('ki,ij,kj->', d, config.spring_tensor(), d))


def friction_filter(v, contacts: Contacts, mu, v_prev=None):
    """
    Coulomb velocity filter on contacting nodes.

    The tangential velocity of each contacting node shrinks by
    ``mu * |dv_n|``, where ``dv_n`` is the change of normal velocity over the
    step (``v_prev`` to ``v``), and is clamped at zero so it never reverses.
    """
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    out = v.copy()
    if not len(contacts) or mu == 0:
        return out.ravel()
    n = contacts.normal
    vc = v[contacts.nodes]
    vn = vc @ n
    if v_prev is None:
        dvn = np.abs(vn)
    else:
        dvn = np.abs(vn - np.asarray(v_prev, dtype=float).reshape(-1, 3)[contacts.nodes] @ n)
    vt = vc - vn[:, None] * n
    speed = np.linalg.norm(vt, axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        scale = np.where(speed > 0, np.maximum(0.0, 1.0 - mu * dvn / speed), 0.0)
    out[contacts.nodes] = vn[:, None] * n + scale[:, None] * vt
    return out.ravel()


def project_to_subspace(v_f, J, system_matrix, offset=None):
    """
    Weighted least-squares fit ``argmin |v_f - offset - J v_d|`` in the norm of
    ``system_matrix`` (``M - beta h^2 K`` on the free dofs).
    """
    r = np.asarray(v_f, dtype=float)
    if offset is not None:
        r = r - offset
    AJ = system_matrix @ J
    N = J.T @ AJ
    N = 0.5 * (N + N.T)
    if not N.size:
        return np.zeros(0)
    try:
        L = np.linalg.cholesky(N)
    except np.linalg.LinAlgError:
        raise StabilityError('projection normal equations are not positive definite') from None
    y = np.linalg.solve(L, AJ.T @ r)
    return np.linalg.solve(L.T, y)

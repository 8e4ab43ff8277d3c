"""
Polar-decomposition kinematics: rotation-variant SVD, the closed-form
rotation gradient dR/dF, and rotation and stretch rates.

All functions accept single matrices ``(3, 3)`` or batches ``(..., 3, 3)``.
"""

import numpy as np

from .assembly import deformation_gradients

__all__ = [
    'svd_rv',
    'polar',
    'rotation_gradient',
    'rotation_gradient_apply',
    'stretch_rate',
    'velocity_gradient',
    'velocity_gradients',
    'PAIR_SUM_EPS',
    'FD_STEP',
]

PAIR_SUM_EPS = 1e-8
FD_STEP = 1e-6

# (a, b, twist) for the three singular value pairs
_TWISTS = (
    (0, 1, np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])),
    (1, 2, np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])),
    (0, 2, np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])),
)


def svd_rv(F):
    """
    Rotation-variant SVD ``F = U diag(s) V^T`` with ``det U = det V = +1``.

    Singular values come out descending; for inverted ``F`` the sign flip
    goes onto the smallest one.
    """
    F = np.asarray(F, dtype=float)
    U, s, Vt = np.linalg.svd(F)
    V = np.swapaxes(Vt, -1, -2).copy()
    U = U.copy()
    fu = np.linalg.det(U) < 0
    fv = np.linalg.det(V) < 0
    U[..., :, 2] = np.where(fu[..., None], -U[..., :, 2], U[..., :, 2])
    V[..., :, 2] = np.where(fv[..., None], -V[..., :, 2], V[..., :, 2])
    s = s.copy()
    s[..., 2] = np.where(fu ^ fv, -s[..., 2], s[..., 2])
    return U, s, V


def polar(F):
    """Return ``(R, S)`` with ``F = R S``, ``R`` a proper rotation and ``S`` symmetric."""
    U, s, V = svd_rv(F)
    R = U @ np.swapaxes(V, -1, -2)
    S = (V * s[..., None, :]) @ np.swapaxes(V, -1, -2)
    return R, S


def rotation_gradient(F):
    """
    ``dR/dF`` as a ``(..., 9, 9)`` matrix in row-major flattening:
    ``sum_i 2 / (s_a + s_b) t_i t_i^T`` over the three twist directions.
    """
    U, s, V = svd_rv(F)
    Vt = np.swapaxes(V, -1, -2)
    out = 0.0
    for a, b, T in _TWISTS:
        t = ((U @ T @ Vt) / np.sqrt(2.0)).reshape(U.shape[:-2] + (9,))
        lam = 2.0 / np.maximum(s[..., a] + s[..., b], PAIR_SUM_EPS)
        out = out + lam[..., None, None] * t[..., :, None] * t[..., None, :]
    return out


def _rdot_closed(F, Fdot):
    G = rotation_gradient(F)
    return np.einsum('...ij,...j->...i', G, Fdot.reshape(Fdot.shape[:-2] + (9,))).reshape(Fdot.shape)


def _rdot_fd(F, Fdot):
    Rp, _ = polar(F + FD_STEP * Fdot)
    Rm, _ = polar(F - FD_STEP * Fdot)
    return (Rp - Rm) / (2.0 * FD_STEP)


def rotation_gradient_apply(F, Fdot):
    """
    Rotation rate ``Rdot = dR/dF : Fdot``.

    The closed form only breaks down when two singular values sum to
    (nearly) zero, i.e. for collapsed or inverted elements; those cases use
    central differences of the polar decomposition instead.
    """
    F = np.asarray(F, dtype=float)
    Fdot = np.asarray(Fdot, dtype=float)
    Rdot = _rdot_closed(F, Fdot)
    _, s, _ = svd_rv(F)
    pair = np.stack([s[..., 0] + s[..., 1], s[..., 1] + s[..., 2], s[..., 0] + s[..., 2]], axis=-1)
    bad = pair.min(axis=-1) < PAIR_SUM_EPS
    if np.any(bad):
        if Rdot.ndim == 2:
            return _rdot_fd(F, Fdot)
        Rdot[bad] = _rdot_fd(F[bad], Fdot[bad])
    return Rdot


def stretch_rate(F, Fdot):
    """``Sdot = R^T (Fdot - Rdot S)``."""
    F = np.asarray(F, dtype=float)
    Fdot = np.asarray(Fdot, dtype=float)
    R, S = polar(F)
    Rdot = rotation_gradient_apply(F, Fdot)
    return np.swapaxes(R, -1, -2) @ (Fdot - Rdot @ S)


def velocity_gradients(mesh, v):
    """``Fdot = dDs/dt Dm^-1`` for every element."""
    return deformation_gradients(mesh, v)


def velocity_gradient(mesh, v, e):
    return deformation_gradients(mesh, v, [e])[0]

"""
Hyperelastic constitutive models.

Every model evaluates on batches of deformation gradients of shape
``(..., 3, 3)``. The stress gradient is returned as a ``(..., 9, 9)`` matrix
in row-major flattening, i.e. entry ``[3*i + j, 3*k + l]`` holds
``dP_ij / dF_kl``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    'MaterialConfigError',
    'MaterialParams',
    'MaterialModel',
    'StableNeoHookean',
    'LinearElastic',
    'FiberStVK',
    'SumMaterial',
    'snh_material',
    'linear_corotational_free_material',
    'anisotropic_stvk_addon',
    'lame_parameters',
]

# Levi-Civita symbol
_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0
_I3 = np.eye(3)
# d^2 det / dF dF is linear in F: H[ab, cd] = eps_ace eps_bdf F_ef
_DET_HESS_BASIS = np.einsum('ace,bdf->efabcd', _EPS, _EPS).reshape(9, 81)


class MaterialConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    anisotropy_direction: Optional[tuple] = None
    anisotropy_stiffness: float = 0.0

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise MaterialConfigError(f'youngs_modulus must be > 0, got {self.youngs_modulus}')
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise MaterialConfigError(f'poisson_ratio must lie in [0, 0.5), got {self.poisson_ratio}')
        if self.anisotropy_direction is not None:
            a = np.asarray(self.anisotropy_direction, dtype=float)
            if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-12:
                raise MaterialConfigError('anisotropy_direction must be a unit 3-vector')
        if self.anisotropy_stiffness < 0:
            raise MaterialConfigError('anisotropy_stiffness must be >= 0')


def lame_parameters(youngs_modulus, poisson_ratio):
    """Return ``(mu, lambda)`` for the given Young's modulus and Poisson ratio."""
    mu = youngs_modulus / (2.0 * (1.0 + poisson_ratio))
    lam = youngs_modulus * poisson_ratio / ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio))
    return mu, lam


def _dot(A, B):
    return np.einsum('...ij,...ij->...', A, B)


def _flat(T):
    return T.reshape(T.shape[:-4] + (9, 9))


def cofactor(F):
    """Cofactor matrix ``dJ/dF`` built from column cross products."""
    f0, f1, f2 = F[..., :, 0], F[..., :, 1], F[..., :, 2]
    return np.stack([np.cross(f1, f2), np.cross(f2, f0), np.cross(f0, f1)], axis=-1)


def det_hessian(F):
    """Second derivative of ``det F``, as a 9x9 matrix."""
    F = np.asarray(F, dtype=float)
    return (F.reshape(F.shape[:-2] + (9,)) @ _DET_HESS_BASIS).reshape(F.shape[:-2] + (9, 9))


class MaterialModel:
    """Interface shared by all constitutive models."""

    def energy_density(self, F):
        raise NotImplementedError

    def pk1_stress(self, F):
        raise NotImplementedError

    def pk1_gradient(self, F):
        raise NotImplementedError

    def __add__(self, other):
        return SumMaterial(self, other)


class StableNeoHookean(MaterialModel):
    """
    Stable Neo-Hookean model in the rest-stable polynomial form

        psi = mu/2 (|F|^2 - 3) - mu (J - 1) + lam/2 (J - 1)^2

    with ``lam = lambda_lame + mu`` so that small strains reproduce linear
    elasticity. The energy is a polynomial in F, so it stays finite for
    inverted elements.
    """

    def __init__(self, params: MaterialParams):
        self.params = params
        mu, lam = lame_parameters(params.youngs_modulus, params.poisson_ratio)
        self.mu = mu
        self.lam = lam + mu

    def energy_density(self, F):
        J = np.linalg.det(F)
        return 0.5 * self.mu * (_dot(F, F) - 3.0) - self.mu * (J - 1.0) + 0.5 * self.lam * (J - 1.0) ** 2

    def pk1_stress(self, F):
        J = np.linalg.det(F)[..., None, None]
        return self.mu * F + (self.lam * (J - 1.0) - self.mu) * cofactor(F)

    def pk1_gradient(self, F):
        F = np.asarray(F, dtype=float)
        J = np.linalg.det(F)[..., None, None]
        g = cofactor(F).reshape(F.shape[:-2] + (9,))
        return (self.mu * np.eye(9)
                + (self.lam * (J - 1.0) - self.mu) * det_hessian(F)
                + self.lam * g[..., :, None] * g[..., None, :])


class LinearElastic(MaterialModel):
    """
    Small-strain linear elasticity, quadratic in F.

    Not frame invariant; its constant tangent makes forces exactly linear in
    nodal positions, which is what the tests need.
    """

    def __init__(self, params: MaterialParams):
        self.params = params
        self.mu, self.lam = lame_parameters(params.youngs_modulus, params.poisson_ratio)
        C = (self.mu * (np.einsum('ik,jl->ijkl', _I3, _I3) + np.einsum('il,jk->ijkl', _I3, _I3))
             + self.lam * np.einsum('ij,kl->ijkl', _I3, _I3))
        self._tangent = _flat(C)
        self._tangent.setflags(write=False)

    def _strain(self, F):
        return 0.5 * (F + np.swapaxes(F, -1, -2)) - _I3

    def energy_density(self, F):
        eps = self._strain(F)
        tr = np.trace(eps, axis1=-2, axis2=-1)
        return self.mu * _dot(eps, eps) + 0.5 * self.lam * tr ** 2

    def pk1_stress(self, F):
        eps = self._strain(F)
        tr = np.trace(eps, axis1=-2, axis2=-1)[..., None, None]
        return 2.0 * self.mu * eps + self.lam * tr * _I3

    def pk1_gradient(self, F):
        F = np.asarray(F)
        return np.broadcast_to(self._tangent, F.shape[:-2] + (9, 9)).copy()


class FiberStVK(MaterialModel):
    """Fiber term ``k/2 (|F a|^2 - 1)^2`` along a unit direction ``a``."""

    def __init__(self, direction, stiffness):
        a = np.asarray(direction, dtype=float)
        self.direction = a
        self.stiffness = float(stiffness)
        self._A = np.outer(a, a)

    def _i5(self, F):
        Fa = F @ self.direction
        return np.einsum('...i,...i->...', Fa, Fa)

    def energy_density(self, F):
        return 0.5 * self.stiffness * (self._i5(F) - 1.0) ** 2

    def pk1_stress(self, F):
        s = (self._i5(F) - 1.0)[..., None, None]
        return 2.0 * self.stiffness * s * (F @ self._A)

    def pk1_gradient(self, F):
        F = np.asarray(F, dtype=float)
        s = (self._i5(F) - 1.0)[..., None, None]
        FA = (F @ self._A).reshape(F.shape[:-2] + (9,))
        H = _flat(np.einsum('ik,lj->ijkl', _I3, self._A))
        return 2.0 * self.stiffness * (s * H + 2.0 * FA[..., :, None] * FA[..., None, :])


class SumMaterial(MaterialModel):
    def __init__(self, *parts):
        self.parts = parts

    def energy_density(self, F):
        return sum(p.energy_density(F) for p in self.parts)

    def pk1_stress(self, F):
        return sum(p.pk1_stress(F) for p in self.parts)

    def pk1_gradient(self, F):
        return sum(p.pk1_gradient(F) for p in self.parts)


def snh_material(params: MaterialParams) -> MaterialModel:
    return StableNeoHookean(params)


def linear_corotational_free_material(params: MaterialParams) -> MaterialModel:
    return LinearElastic(params)


def anisotropic_stvk_addon(base: MaterialModel, params: MaterialParams) -> MaterialModel:
    """Add a fiber-reinforcement term to ``base``."""
    if params.anisotropy_direction is None:
        raise MaterialConfigError('anisotropic add-on requires anisotropy_direction')
    return SumMaterial(base, FiberStVK(params.anisotropy_direction, params.anisotropy_stiffness))

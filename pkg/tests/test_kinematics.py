import numpy as np
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from conjac.kinematics import polar, rotation_gradient, rotation_gradient_apply, stretch_rate, svd_rv, velocity_gradient

from conftest import random_rotation


def random_F(rng, n=None, spread=0.3):
    shape = (3, 3) if n is None else (n, 3, 3)
    return np.eye(3) + spread * rng.normal(size=shape)


def test_svd_rv_reconstructs_with_proper_rotations(rng):
    F = random_F(rng, 200)
    U, s, V = svd_rv(F)
    assert_allclose(U * s[:, None, :] @ np.swapaxes(V, 1, 2), F, atol=1e-12)
    assert_allclose(np.linalg.det(U), 1.0, atol=1e-12)
    assert_allclose(np.linalg.det(V), 1.0, atol=1e-12)
    assert np.all(s[:, 0] >= s[:, 1]) and np.all(s[:, 1] >= np.abs(s[:, 2]))


def test_inverted_F_gets_one_negative_singular_value(rng):
    F = np.diag([1.2, 0.9, -0.5]) @ random_rotation(rng)
    _, s, _ = svd_rv(F)
    assert_allclose(s, [1.2, 0.9, -0.5], atol=1e-12)
    R, S = polar(F)
    assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)
    assert_allclose(R @ S, F, atol=1e-12)


def test_polar_factors(rng):
    F = random_F(rng, 50)
    R, S = polar(F)
    assert_allclose(R @ S, F, atol=1e-12)
    assert_allclose(S, np.swapaxes(S, 1, 2), atol=1e-12)
    assert_allclose(np.swapaxes(R, 1, 2) @ R, np.broadcast_to(np.eye(3), R.shape), atol=1e-12)


def test_rotation_gradient_matches_fd(rng):
    for _ in range(100):
        F = random_F(rng)
        if np.linalg.det(F) < 0.2:
            continue
        G = rotation_gradient(F)
        fd = np.empty((9, 9))
        for k in range(9):
            d = np.zeros(9)
            d[k] = 1e-6
            fd[:, k] = ((polar(F + d.reshape(3, 3))[0] - polar(F - d.reshape(3, 3))[0]) / 2e-6).ravel()
        assert_allclose(G, fd, atol=1e-6 * max(1.0, np.abs(G).max()))


def test_rotation_gradient_at_identity():
    """dR/dF at the identity is the skew-symmetric projector."""
    G = rotation_gradient(np.eye(3))
    for k in range(9):
        E = np.zeros(9)
        E[k] = 1.0
        E = E.reshape(3, 3)
        assert_allclose((G @ E.ravel()).reshape(3, 3), 0.5 * (E - E.T), atol=1e-14)


def test_degenerate_pair_uses_finite_differences(rng):
    F = np.diag([1.0, 1e-10, -1e-10])
    Fdot = rng.normal(size=(3, 3))
    Rdot = rotation_gradient_apply(F, Fdot)
    assert np.all(np.isfinite(Rdot))


def test_rigid_rotation_has_zero_stretch_rate(rng):
    R = random_rotation(rng)
    W = rng.normal(size=(3, 3))
    W = W - W.T
    Sdot = stretch_rate(R, W @ R)
    assert_allclose(Sdot, 0.0, atol=1e-12)


def test_stretch_rate_of_pure_stretch():
    F = np.diag([1.2, 1.0, 0.8])
    Fdot = np.diag([0.5, -0.1, 0.3])
    assert_allclose(stretch_rate(F, Fdot), Fdot, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_stretch_rate_matches_fd_property(seed):
    rng = np.random.default_rng(seed)
    F = random_F(rng, spread=0.2)
    if np.linalg.det(F) < 0.3:
        return
    Fdot = rng.normal(size=(3, 3))
    e = 1e-6
    fd = (polar(F + e * Fdot)[1] - polar(F - e * Fdot)[1]) / (2 * e)
    assert_allclose(stretch_rate(F, Fdot), fd, atol=1e-5 * max(1.0, np.abs(fd).max()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_stretch_rate_is_rotation_invariant_property(seed):
    rng = np.random.default_rng(seed)
    F = random_F(rng, spread=0.2)
    if np.linalg.det(F) < 0.3:
        return
    Fdot = rng.normal(size=(3, 3))
    Q = random_rotation(rng)
    assert_allclose(stretch_rate(Q @ F, Q @ Fdot), stretch_rate(F, Fdot), atol=1e-9)


def test_velocity_gradient_of_linear_field(bar, rng):
    L = rng.normal(size=(3, 3))
    v = (bar.rest_positions @ L.T).ravel()
    for e in range(bar.n_elements):
        assert_allclose(velocity_gradient(bar, v, e), L, atol=1e-10)

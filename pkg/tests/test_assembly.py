import numpy as np
import pytest
from numpy.testing import assert_allclose

from conjac.assembly import Assembler, assemble, deformation_gradient, deformation_gradients, remove_elements
from conjac.mesh import TetMesh, lumped_mass
from conjac.meshgen import box_mesh, perturbed

from conftest import random_rotation, unit_tet_arrays


def random_state(mesh, rng, scale=0.05):
    L = mesh.extent()
    return mesh.rest_positions.ravel() + rng.normal(size=3 * mesh.n_nodes) * scale * L


def test_deformation_gradient_cases(bar, rng):
    x0 = bar.rest_positions
    assert_allclose(deformation_gradient(bar, x0.ravel(), 0), np.eye(3), atol=1e-12)
    F = deformation_gradients(bar, 2.0 * x0.ravel())
    assert_allclose(F, np.broadcast_to(2.0 * np.eye(3), F.shape), atol=1e-12)
    R = random_rotation(rng)
    F = deformation_gradients(bar, (x0 @ R.T).ravel())
    assert_allclose(F, np.broadcast_to(R, F.shape), atol=1e-12)


def test_rest_forces_vanish(bar, snh):
    sys = assemble(bar, snh, bar.rest_positions.ravel())
    assert np.abs(sys.forces).max() < 1e-10


def test_gravity_only_at_rest(bar, snh):
    g = np.array([0.0, 0.0, -9.81])
    Mg = (lumped_mass(bar).diag[:, None] * g).ravel()
    sys = assemble(bar, snh, bar.rest_positions.ravel(), external=Mg)
    assert_allclose(sys.forces, Mg, atol=1e-10)


def test_stretched_tet_forces_match_energy_fd(snh):
    x, t = unit_tet_arrays()
    mesh = TetMesh.from_arrays(0.1 * x, t)
    asm = Assembler(mesh, snh)
    xs = (0.1 * x * np.array([1.3, 0.9, 1.1])).ravel()
    f = asm.assemble(xs).forces
    e = 1e-7
    fd = np.array([(asm.energy(xs + e * d) - asm.energy(xs - e * d)) / (2 * e) for d in np.eye(12)])
    assert_allclose(-f, fd, rtol=1e-4, atol=1e-6 * np.abs(f).max())


def test_stiffness_matches_force_fd(rng, snh):
    mesh = perturbed(box_mesh((0.1, 0.1, 0.05), (2, 2, 1)), 0.1, seed=5)
    assert mesh.n_nodes <= 20
    asm = Assembler(mesh, snh)
    x = random_state(mesh, rng)
    K = asm.assemble(x).stiffness.toarray()
    e = 1e-7
    fd = np.empty_like(K)
    for k in range(x.size):
        d = np.zeros(x.size)
        d[k] = e
        fd[:, k] = (asm.assemble(x + d, with_stiffness=False).forces
                    - asm.assemble(x - d, with_stiffness=False).forces) / (2 * e)
    assert np.abs(fd - K).max() < 1e-4 * np.abs(K).max()


def test_stiffness_symmetric_and_negative_semidefinite(bar, snh, rng):
    K = Assembler(bar, snh).assemble(random_state(bar, rng, 0.01)).stiffness
    Kd = K.toarray()
    assert np.abs(Kd - Kd.T).max() < 1e-8 * np.abs(Kd).max()
    assert np.linalg.eigvalsh(0.5 * (Kd + Kd.T)).max() < 1e-8 * np.abs(Kd).max()


def test_translation_null_space(bar, snh, rng):
    K = Assembler(bar, snh).assemble(random_state(bar, rng)).stiffness
    for axis in range(3):
        t = np.zeros((bar.n_nodes, 3))
        t[:, axis] = 1.0
        assert np.abs(K @ t.ravel()).max() < 1e-8 * abs(K).max()


def test_internal_forces_sum_to_zero(bar, snh, rng):
    f = Assembler(bar, snh).assemble(random_state(bar, rng)).forces
    assert np.abs(f.reshape(-1, 3).sum(axis=0)).max() < 1e-8


def test_pattern_fixed_across_assemblies(bar, snh, rng):
    asm = Assembler(bar, snh)
    K1 = asm.assemble(random_state(bar, rng)).stiffness
    asm.remove_elements([0, 3])
    K2 = asm.assemble(random_state(bar, rng)).stiffness
    assert np.array_equal(K1.indptr, K2.indptr) and np.array_equal(K1.indices, K2.indices)


def test_assembly_is_deterministic(bar, snh, rng):
    x = random_state(bar, rng)
    a = Assembler(bar, snh).assemble(x)
    b = Assembler(bar, snh).assemble(x)
    assert np.array_equal(a.forces, b.forces)
    assert np.array_equal(a.stiffness.data, b.stiffness.data)


def test_remove_nothing_is_bit_identical(bar, snh, rng):
    x = random_state(bar, rng)
    asm = Assembler(bar, snh)
    a = asm.assemble(x)
    active, orphans = remove_elements(asm, [])
    b = asm.assemble(x)
    assert active.all() and orphans.size == 0
    assert np.array_equal(a.forces, b.forces)
    assert np.array_equal(a.stiffness.data, b.stiffness.data)


def test_removing_incident_elements_orphans_node(bar, snh, rng):
    node = 0
    incident = np.flatnonzero((bar.tets == node).any(axis=1))
    asm = Assembler(bar, snh)
    active, orphans = remove_elements(asm, incident)
    assert node in orphans
    sys = asm.assemble(random_state(bar, rng))
    assert np.all(sys.forces[3 * node:3 * node + 3] == 0.0)
    K = sys.stiffness.tocsr()
    assert np.all(K[3 * node:3 * node + 3].data == 0.0)


def test_remove_one_of_two_elements_matches_fresh(snh, rng):
    x = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.0]]) * 0.1
    t = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    two = TetMesh.from_arrays(x, t)
    one = TetMesh.from_arrays(x, t[:1])
    xs = x.ravel() + rng.normal(size=15) * 0.005
    asm = Assembler(two, snh)
    asm.remove_elements([1])
    got = asm.assemble(xs)
    ref = Assembler(one, snh).assemble(xs)
    assert_allclose(got.stiffness.toarray(), ref.stiffness.toarray(), rtol=0, atol=1e-9)
    assert_allclose(got.forces, ref.forces, atol=1e-12)


def test_removal_changes_only_that_block(bar, snh, rng):
    x = random_state(bar, rng)
    asm = Assembler(bar, snh)
    full = asm.assemble(x).stiffness.toarray()
    one = TetMesh.from_arrays(bar.rest_positions, bar.tets[[2]])
    block = Assembler(one, snh).assemble(x).stiffness.toarray()
    asm.remove_elements([2])
    rest = asm.assemble(x).stiffness.toarray()
    assert_allclose(full - rest, block, atol=1e-9 * np.abs(full).max())


def test_per_element_materials(bar, snh, linear, rng):
    mats = [snh if e % 2 else linear for e in range(bar.n_elements)]
    x = random_state(bar, rng, 0.01)
    got = assemble(bar, mats, x).forces
    odd = np.arange(bar.n_elements) % 2 == 1
    ref = assemble(bar, snh, x, active=odd).forces + assemble(bar, linear, x, active=~odd).forces
    assert_allclose(got, ref, atol=1e-12)


def test_material_count_mismatch(bar, snh):
    with pytest.raises(ValueError):
        Assembler(bar, [snh] * (bar.n_elements - 1))

"""
Global force and tangent stiffness assembly.

Sign convention: ``forces`` holds internal elastic forces (minus the energy
gradient) plus external loads, and ``stiffness = d forces / d x``. The
stiffness is therefore negative semidefinite at stable configurations.

The sparsity pattern is computed once from connectivity (every element's
12x12 block plus every node's 3x3 diagonal block) and reused for every
assembly. Removing elements only zeroes their contributions.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .mesh import TetMesh

__all__ = [
    'GlobalSystem',
    'SparsityPattern',
    'Assembler',
    'deformation_gradient',
    'deformation_gradients',
    'shape_gradients',
    'assemble',
    'remove_elements',
    'orphaned_nodes',
]


@dataclass
class GlobalSystem:
    forces: np.ndarray
    stiffness: sps.csr_matrix
    active_elements: np.ndarray


def shape_gradients(mesh: TetMesh):
    """
    Gradients of the linear shape functions, shape ``(m, 4, 3)``.

    ``F = sum_a x_a g_a^T`` for every element, so ``dF_ij / dx_ak = delta_ik g_aj``.
    """
    G = mesh.inv_material_matrix
    return np.concatenate([-G.sum(axis=1, keepdims=True), G], axis=1)


def deformation_gradients(mesh: TetMesh, x, elements=None):
    """Batched ``F = Ds Dm^-1`` for all (or the selected) elements."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    tets = mesh.tets if elements is None else mesh.tets[elements]
    Dm_inv = mesh.inv_material_matrix if elements is None else mesh.inv_material_matrix[elements]
    p = x[tets]
    Ds = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=-1)
    return Ds @ Dm_inv


def deformation_gradient(mesh: TetMesh, x, e: int):
    return deformation_gradients(mesh, x, [e])[0]


class SparsityPattern:
    """
    CSR structure of the 3n x 3n stiffness, with scatter maps.

    ``element_map[e]`` holds the 144 data positions of element ``e``'s
    12x12 block (row-major over ``(node a, dim i) x (node b, dim k)``);
    ``node_block_map[v]`` holds the 9 positions of node ``v``'s diagonal block.
    """

    def __init__(self, mesh: TetMesh):
        n = mesh.n_nodes
        N = 3 * n
        dofs = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(-1, 12)
        er = np.repeat(dofs, 12, axis=1)
        ec = np.tile(dofs, (1, 12))
        ndofs = (3 * np.arange(n)[:, None] + np.arange(3)).reshape(-1, 3)
        nr = np.repeat(ndofs, 3, axis=1)
        nc = np.tile(ndofs, (1, 3))

        keys = np.concatenate([(er * N + ec).ravel(), (nr * N + nc).ravel()])
        uniq, inv = np.unique(keys, return_inverse=True)
        rows = uniq // N
        self.shape = (N, N)
        self.indices = (uniq % N).astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(N + 1)).astype(np.int32)
        self.nnz = uniq.size
        ne = er.size
        self.element_map = inv[:ne].reshape(-1, 144)
        self.node_block_map = inv[ne:].reshape(-1, 9)
        for a in (self.indices, self.indptr, self.element_map, self.node_block_map):
            a.setflags(write=False)

    def matrix(self, data):
        # explicit zeros are kept; the pattern never changes
        return sps.csr_matrix((data, self.indices, self.indptr), shape=self.shape, copy=False)

    def scatter_elements(self, blocks, elements):
        """Sum per-element 12x12 blocks into a data vector."""
        idx = self.element_map[elements].ravel()
        return np.bincount(idx, weights=np.asarray(blocks).ravel(), minlength=self.nnz)

    def add_node_blocks(self, data, nodes, blocks):
        np.add.at(data, self.node_block_map[np.asarray(nodes, dtype=int)].ravel(),
                  np.asarray(blocks, dtype=float).ravel())


def _material_groups(materials, n_elements):
    if not isinstance(materials, (list, tuple, np.ndarray)):
        return [(materials, np.arange(n_elements))]
    if len(materials) != n_elements:
        raise ValueError(f'{len(materials)} materials for {n_elements} elements')
    groups = {}
    for e, m in enumerate(materials):
        groups.setdefault(id(m), (m, []))[1].append(e)
    return [(m, np.asarray(ids)) for m, ids in groups.values()]


class Assembler:
    """
    Reusable assembler bound to one mesh and its material assignment.

    Parameters
    ----------
    mesh : TetMesh
    materials : MaterialModel or sequence of MaterialModel
        One model for all elements, or one per element.
    """

    def __init__(self, mesh: TetMesh, materials):
        self.mesh = mesh
        self.pattern = SparsityPattern(mesh)
        self.groups = _material_groups(materials, mesh.n_elements)
        self.grad = shape_gradients(mesh)
        self.active = np.ones(mesh.n_elements, dtype=bool)

    @staticmethod
    def _dF_dx(g):
        # G[e, 3i+j, 3a+k] = d F_ij / d x_ak = delta_ik g_aj
        G = np.zeros((g.shape[0], 3, 3, 4, 3))
        for i in range(3):
            G[:, i, :, :, i] = np.swapaxes(g, 1, 2)
        return G.reshape(-1, 9, 12)

    def remove_elements(self, elements):
        self.active[np.asarray(elements, dtype=int)] = False
        return self.active

    @property
    def orphaned(self):
        return orphaned_nodes(self.mesh, self.active)

    def energy(self, x):
        """Total elastic energy of the active elements, J."""
        F = deformation_gradients(self.mesh, x)
        total = 0.0
        for model, ids in self.groups:
            ids = ids[self.active[ids]]
            if ids.size:
                total += float(np.dot(self.mesh.rest_volume[ids], model.energy_density(F[ids])))
        return total

    def assemble(self, x, external=None, with_stiffness=True) -> GlobalSystem:
        mesh = self.mesh
        n = mesh.n_nodes
        F = deformation_gradients(mesh, x)
        forces = np.zeros((n, 3))
        data = np.zeros(self.pattern.nnz)
        for model, ids in self.groups:
            ids = ids[self.active[ids]]
            if not ids.size:
                continue
            vol = mesh.rest_volume[ids]
            g = self.grad[ids]
            P = model.pk1_stress(F[ids])
            fe = -vol[:, None, None] * np.einsum('eij,eaj->eai', P, g)
            np.add.at(forces, mesh.tets[ids], fe)
            if with_stiffness:
                H = model.pk1_gradient(F[ids]).reshape(-1, 9, 9)
                G = self._dF_dx(g)
                Ke = -vol[:, None, None] * (np.swapaxes(G, 1, 2) @ (H @ G))
                data += self.pattern.scatter_elements(Ke, ids)
        forces = forces.ravel()
        if external is not None:
            forces = forces + np.asarray(external, dtype=float).ravel()
        K = self.pattern.matrix(data) if with_stiffness else None
        return GlobalSystem(forces, K, self.active.copy())


def orphaned_nodes(mesh: TetMesh, active):
    """Nodes with no active incident element."""
    count = np.bincount(mesh.tets[active].ravel(), minlength=mesh.n_nodes)
    return np.flatnonzero(count == 0)


def assemble(mesh: TetMesh, materials, x, external=None, active=None) -> GlobalSystem:
    """One-off assembly; use :class:`Assembler` to reuse the pattern across steps."""
    asm = Assembler(mesh, materials)
    if active is not None:
        asm.active[:] = active
    return asm.assemble(x, external)


def remove_elements(assembler: Assembler, elements):
    """Deactivate elements; returns ``(active mask, orphaned node ids)``."""
    active = assembler.remove_elements(elements)
    return active, assembler.orphaned

"""
Small structured tetrahedral meshes for tests and the shipped scenes.
"""

import numpy as np

from .mesh import TetMesh

__all__ = ['box_mesh', 'voxel_mesh', 'perturbed', 'nearest_node']

# Kuhn split: six tets around the 0-7 diagonal of a hex with corners numbered
# (i, j, k) -> i + 2j + 4k. Adjacent cells produce conforming faces.
_HEX_TETS = np.array([
    [0, 1, 3, 7],
    [0, 1, 7, 5],
    [0, 2, 7, 3],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 7, 6],
])


def voxel_mesh(occupied, spacing, origin=(0.0, 0.0, 0.0), density=1000.0):
    """
    Tetrahedralize a boolean voxel grid, six tets per occupied cell.

    Parameters
    ----------
    occupied : ndarray of bool, shape (nx, ny, nz)
    spacing : float or 3-sequence
        Cell size along each axis, m.
    """
    occupied = np.asarray(occupied, dtype=bool)
    nx, ny, nz = occupied.shape
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    grid_id = lambda i, j, k: (i * (ny + 1) + j) * (nz + 1) + k

    cells = np.argwhere(occupied)
    corners = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])
    tets = []
    for i, j, k in cells:
        ids = [grid_id(i + a, j + b, k + c) for a, b, c in corners]
        tets.append(np.asarray(ids)[_HEX_TETS])
    tets = np.concatenate(tets)

    used, tets = np.unique(tets, return_inverse=True)
    tets = tets.reshape(-1, 4)
    ii, rem = np.divmod(used, (ny + 1) * (nz + 1))
    jj, kk = np.divmod(rem, nz + 1)
    positions = np.asarray(origin, dtype=float) + np.stack([ii, jj, kk], axis=1) * h

    Dm = positions[tets[:, 1:]] - positions[tets[:, :1]]
    flip = np.linalg.det(Dm) < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    return TetMesh.from_arrays(positions, tets, density)


def box_mesh(size, cells, origin=(0.0, 0.0, 0.0), density=1000.0):
    """Axis-aligned box of ``cells = (nx, ny, nz)`` hexes split into tets."""
    cells = tuple(int(c) for c in cells)
    spacing = np.asarray(size, dtype=float) / np.asarray(cells)
    return voxel_mesh(np.ones(cells, dtype=bool), spacing, origin, density)


def perturbed(mesh, amplitude, seed=0, keep=None):
    """Jitter node positions by up to ``amplitude`` (relative to the shortest edge)."""
    rng = np.random.default_rng(seed)
    x = mesh.rest_positions
    edges = x[mesh.tets[:, [1, 2, 3, 2, 3, 3]]] - x[mesh.tets[:, [0, 0, 0, 1, 1, 2]]]
    shortest = np.linalg.norm(edges, axis=-1).min()
    dx = rng.uniform(-1.0, 1.0, size=x.shape) * amplitude * shortest
    if keep is not None:
        dx[np.asarray(keep)] = 0.0
    return TetMesh.from_arrays(x + dx, mesh.tets, mesh.density)


def nearest_node(mesh, point):
    d = np.linalg.norm(mesh.rest_positions - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(d))

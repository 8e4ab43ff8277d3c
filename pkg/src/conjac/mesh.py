"""
Tetrahedral meshes: loading, rest-state precomputation and lumped mass.
"""

from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

__all__ = [
    'MeshParseError',
    'DegenerateElementError',
    'TetMesh',
    'MassMatrix',
    'load_mesh',
    'read_mesh_files',
    'write_node_file',
    'write_ele_file',
    'lumped_mass',
    'VOLUME_EPS',
]

VOLUME_EPS = 1e-12


class MeshParseError(ValueError):
    """Malformed node or element file."""

    def __init__(self, message, line_number=None, source='mesh'):
        self.line_number = line_number
        if line_number is not None:
            message = f'{source}:{line_number}: {message}'
        super().__init__(message)


class DegenerateElementError(ValueError):
    """An element with (near) zero or negative rest volume."""

    def __init__(self, element, volume):
        self.element = element
        self.volume = volume
        super().__init__(f'element {element} has rest volume {volume:.3e} m^3 '
                         f'(must exceed {VOLUME_EPS:.0e})')


@dataclass(frozen=True, eq=False)
class TetMesh:
    """
    Rest geometry and connectivity of a linear tetrahedral mesh.

    Attributes
    ----------
    rest_positions : ndarray, shape (n, 3)
    tets : ndarray of int, shape (m, 4)
    inv_material_matrix : ndarray, shape (m, 3, 3)
        Inverse of the rest edge matrix ``Dm = [x1-x0 | x2-x0 | x3-x0]``.
    rest_volume : ndarray, shape (m,)
    density : ndarray, shape (m,)
    """
    rest_positions: np.ndarray
    tets: np.ndarray
    inv_material_matrix: np.ndarray
    rest_volume: np.ndarray
    density: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, positions, tets, density=1000.0):
        positions = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
        tets = np.ascontiguousarray(tets, dtype=np.int64).reshape(-1, 4)
        n = positions.shape[0]
        if tets.size and (tets.min() < 0 or tets.max() >= n):
            bad = np.flatnonzero((tets < 0).any(1) | (tets >= n).any(1))[0]
            raise MeshParseError(f'element {bad} references a node outside [0, {n})')
        for e, t in enumerate(tets):
            if len(set(t.tolist())) != 4:
                raise DegenerateElementError(e, 0.0)

        Dm = rest_edge_matrices(positions, tets)
        vol = np.linalg.det(Dm) / 6.0
        bad = np.flatnonzero(vol <= VOLUME_EPS)
        if bad.size:
            raise DegenerateElementError(int(bad[0]), float(vol[bad[0]]))
        Dm_inv = np.linalg.inv(Dm)

        density = np.broadcast_to(np.asarray(density, dtype=float), vol.shape).copy()
        for a in (positions, tets, Dm_inv, vol, density):
            a.setflags(write=False)
        return cls(positions, tets, Dm_inv, vol, density)

    @property
    def n_nodes(self):
        return self.rest_positions.shape[0]

    @property
    def n_elements(self):
        return self.tets.shape[0]

    def with_density(self, density):
        """Copy of the mesh with a new per-element density."""
        density = np.broadcast_to(np.asarray(density, dtype=float), self.rest_volume.shape).copy()
        density.setflags(write=False)
        return TetMesh(self.rest_positions, self.tets, self.inv_material_matrix,
                       self.rest_volume, density)

    def centroids(self, x=None):
        x = self.rest_positions if x is None else np.asarray(x).reshape(-1, 3)
        return x[self.tets].mean(axis=1)

    def extent(self):
        """Largest side of the rest bounding box, m."""
        return float(np.ptp(self.rest_positions, axis=0).max())


@dataclass(frozen=True, eq=False)
class MassMatrix:
    """Lumped (diagonal) nodal mass, kg."""
    diag: np.ndarray

    def dof_diagonal(self):
        """Mass per degree of freedom (each nodal mass repeated 3 times)."""
        return np.repeat(self.diag, 3)

    @property
    def total(self):
        return float(self.diag.sum())


def rest_edge_matrices(positions, tets):
    x = positions[tets]
    return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=-1)


def _data_lines(stream):
    for number, raw in enumerate(stream, start=1):
        line = raw.split('#', 1)[0].strip()
        if line:
            yield number, line.split()


def _parse_header(lines, source, min_fields):
    try:
        number, fields = next(lines)
    except StopIteration:
        raise MeshParseError('missing header line', None, source) from None
    try:
        count = int(fields[0])
        if len(fields) < min_fields:
            raise ValueError
    except ValueError:
        raise MeshParseError(f'bad header {" ".join(fields)!r}', number, source) from None
    return count


def _parse_rows(lines, count, width, convert, source):
    ids = np.empty(count, dtype=np.int64)
    rows = np.empty((count, width), dtype=convert)
    k = 0
    for number, fields in lines:
        if k == count:
            raise MeshParseError(f'more than {count} entries', number, source)
        if len(fields) < width + 1:
            raise MeshParseError(f'expected {width + 1} fields, got {len(fields)}', number, source)
        try:
            ids[k] = int(fields[0])
            rows[k] = [convert(v) for v in fields[1:width + 1]]
        except ValueError:
            raise MeshParseError(f'cannot parse {" ".join(fields)!r}', number, source) from None
        k += 1
    if k != count:
        raise MeshParseError(f'header announces {count} entries, found {k}', None, source)
    return ids, rows


def load_mesh(node_source: TextIO, ele_source: TextIO, density=1000.0) -> TetMesh:
    """
    Read a mesh from ``.node``/``.ele`` style text streams.

    Node file: header ``<n_nodes> 3 0 0`` followed by ``<index> <x> <y> <z>``.
    Element file: header ``<n_tets> 4 0`` followed by ``<index> <i0> <i1> <i2> <i3>``.
    Indexing may start at 0 or 1; the base is taken from the first node index
    and applied to element references as well. Elements with negative
    orientation are flipped.
    """
    lines = _data_lines(node_source)
    n_nodes = _parse_header(lines, 'node', 2)
    node_ids, pos = _parse_rows(lines, n_nodes, 3, float, 'node')
    base = int(node_ids[0]) if n_nodes else 0
    if base not in (0, 1):
        raise MeshParseError(f'first node index must be 0 or 1, got {base}', None, 'node')
    order = node_ids - base
    if not np.array_equal(np.sort(order), np.arange(n_nodes)):
        raise MeshParseError('node indices are not a contiguous range', None, 'node')
    positions = np.empty_like(pos)
    positions[order] = pos

    lines = _data_lines(ele_source)
    n_tets = _parse_header(lines, 'ele', 2)
    _, tets = _parse_rows(lines, n_tets, 4, int, 'ele')
    tets = tets - base

    # orientation is fixed here so that a consistently wound file is not required
    if n_tets:
        Dm = rest_edge_matrices(positions, np.clip(tets, 0, max(n_nodes - 1, 0)))
        flip = np.linalg.det(Dm) < 0
        tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    return TetMesh.from_arrays(positions, tets, density)


def read_mesh_files(node_path, ele_path, density=1000.0) -> TetMesh:
    with open(node_path) as fn, open(ele_path) as fe:
        return load_mesh(fn, fe, density)


def write_node_file(stream, positions):
    # repr of a Python float round-trips exactly
    positions = np.asarray(positions, dtype=float).reshape(-1, 3).tolist()
    stream.write(f'{len(positions)} 3 0 0\n')
    for i, (a, b, c) in enumerate(positions):
        stream.write(f'{i} {a!r} {b!r} {c!r}\n')


def write_ele_file(stream, tets: Iterable):
    tets = np.asarray(tets, dtype=np.int64).reshape(-1, 4).tolist()
    stream.write(f'{len(tets)} 4 0\n')
    for i, t in enumerate(tets):
        stream.write(f'{i} {t[0]} {t[1]} {t[2]} {t[3]}\n')


def lumped_mass(mesh: TetMesh) -> MassMatrix:
    """Distribute ``density * volume / 4`` of every element to each of its nodes."""
    quarter = mesh.density * mesh.rest_volume / 4.0
    diag = np.bincount(mesh.tets.ravel(), weights=np.repeat(quarter, 4),
                       minlength=mesh.n_nodes)
    if np.any(diag <= 0):
        lonely = int(np.flatnonzero(diag <= 0)[0])
        raise ValueError(f'node {lonely} belongs to no element and would have zero mass')
    diag.setflags(write=False)
    return MassMatrix(diag)

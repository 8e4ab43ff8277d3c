"""Regenerate the node/ele files of the shipped scenes that are not plain boxes."""

from pathlib import Path

import numpy as np

from conjac.mesh import write_ele_file, write_node_file
from conjac.meshgen import perturbed, voxel_mesh

OUT = Path(__file__).resolve().parent.parent / 'src' / 'conjac' / 'scenes'


def save(name, mesh):
    with open(OUT / f'{name}.node', 'w') as fh:
        write_node_file(fh, mesh.rest_positions)
    with open(OUT / f'{name}.ele', 'w') as fh:
        write_ele_file(fh, mesh.tets)
    print(f'{name}: {mesh.n_nodes} nodes, {mesh.n_elements} elements')


def blob():
    # rounded 6x6x4 voxel lump, jittered so the mesh is irregular
    i, j, k = np.indices((6, 6, 4)) + 0.5
    occ = ((i - 3) / 3.2) ** 2 + ((j - 3) / 3.2) ** 2 + ((k - 2) / 2.4) ** 2 <= 1.0
    mesh = voxel_mesh(occ, 0.015, origin=(-0.045, -0.045, 0.02))
    return perturbed(mesh, 0.15, seed=7)


def figure():
    # torso with two arms, two legs and a head
    occ = np.zeros((9, 3, 9), dtype=bool)
    occ[3:6, :, 2:7] = True     # torso
    occ[0:3, :, 5:7] = True     # left arm
    occ[6:9, :, 5:7] = True     # right arm
    occ[3, :, 0:2] = True       # left leg
    occ[5, :, 0:2] = True       # right leg
    occ[4, :, 7:9] = True       # head
    return voxel_mesh(occ, 0.02)


if __name__ == '__main__':
    save('blob', blob())
    fig = figure()
    save('figure', fig)
    # region labels: nearest of five representative points
    reps = np.array([[0.0, 0.04, 0.12], [0.18, 0.04, 0.12], [0.08, 0.04, 0.18],
                     [0.12, 0.04, 0.06], [0.08, 0.04, 0.02]])
    c = fig.centroids()
    lab = np.argmin(np.linalg.norm(c[:, None] - reps[None], axis=-1), axis=1)
    np.savetxt(OUT / 'figure.regions', lab, fmt='%d')

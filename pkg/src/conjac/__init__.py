"""
Deformable tetrahedral FEM simulation with velocity-level condensation.

A few user-chosen dynamic nodes carry inertia; every other free node is
kept in force balance and follows the dynamic ones through the condensation
Jacobian ``-K_qq^-1 K_qd``.
"""

from .mesh import TetMesh, MassMatrix, load_mesh, read_mesh_files, lumped_mass
from .meshgen import box_mesh, voxel_mesh
from .materials import (MaterialParams, StableNeoHookean, LinearElastic, FiberStVK,
                        snh_material, linear_corotational_free_material, anisotropic_stvk_addon)
from .assembly import Assembler, assemble
from .condensation import NodePartition, Condenser, condense, condense_adjusted, reduced_system
from .integrators import (SimState, SolverConfig, Body, VanillaIntegrator, ConJacIntegrator,
                          AdaptiveConJacIntegrator, vanilla_step, conjac_step, quasistatic_init)
from .kinematics import polar, rotation_gradient, stretch_rate
from .contact import ContactConfig, penalty_contacts, friction_filter, project_to_subspace

__version__ = '0.1.0'

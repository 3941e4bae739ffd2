"""Level-set topology optimization with a no-enclosed-cavity constraint.

Structures built by powder-bed additive manufacturing must not contain
voids that are sealed off from the outside: unsintered powder trapped in
such cavities cannot be removed.  This package detects enclosed cavities
with an auxiliary diffusion-reaction field, turns the detection into a
differentiable constraint functional, and couples it to level-set
topology optimization of stiffness and heat-conduction designs.
"""

from topopt.mesh import BoxSpec, SimplexMesh, generate_box_mesh, facet_tag_measure
from topopt.levelset import LevelSetField, EvolutionParams
from topopt.cavity_constraint import CavityModelParams, FictitiousField
from topopt.physics import ComplianceCase, ThermalCase, PhysicsSolution
from topopt.optimizer import OptimizationState, StopCriteria
from topopt.geometry_oracle import VoidComponents, label_voids

__version__ = "0.1.0"

__all__ = [
    "BoxSpec",
    "SimplexMesh",
    "generate_box_mesh",
    "facet_tag_measure",
    "LevelSetField",
    "EvolutionParams",
    "CavityModelParams",
    "FictitiousField",
    "ComplianceCase",
    "ThermalCase",
    "PhysicsSolution",
    "OptimizationState",
    "StopCriteria",
    "VoidComponents",
    "label_voids",
    "__version__",
]

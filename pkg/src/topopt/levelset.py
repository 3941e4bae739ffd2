"""Level-set design field and its reaction-diffusion update.

The design variable is a nodal scalar ``phi`` in [-1, 1]: positive in
material, negative in void, with the structural boundary at the zero
iso-contour.  The per-element characteristic function is the mean of the
nodal material indicators, so only boundary-cut elements take fractional
values.

One optimization step evolves ``phi`` by a pseudo-time reaction-diffusion
equation: the (nodal) sensitivity field acts as the reaction term and a
Laplacian weighted by ``tau`` regularizes the shape.  Diffusion is
treated implicitly and the reaction explicitly, which is unconditionally
stable in ``tau``; the mass matrix is lumped so that raising the
sensitivity at a node can never raise the updated ``phi`` there.
Zero-flux conditions apply on the domain boundary except on an optional
tag marking where the structure continues past the design domain, which
pins ``phi`` to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from topopt import fem_core
from topopt.errors import InvalidSpecError
from topopt.mesh import SimplexMesh


@dataclass(frozen=True)
class EvolutionParams:
    """Parameters of one reaction-diffusion pseudo-time step.

    ``tau`` controls geometric complexity (larger = smoother, simpler
    shapes), ``rate`` is the proportionality constant between sensitivity
    and level-set velocity, ``time_step`` the pseudo-time increment.
    """

    tau: float
    rate: float = 1.0
    time_step: float = 1.0
    material_boundary_tag: str | None = None

    def __post_init__(self):
        if self.tau <= 0 or self.rate <= 0 or self.time_step <= 0:
            raise InvalidSpecError("tau, rate and time_step must all be positive")


class LevelSetField:
    """Nodal design variable clamped to [-1, 1] on a fixed mesh."""

    def __init__(self, mesh: SimplexMesh, phi: np.ndarray | float = 1.0,
                 char_length: float = 1.0):
        self.mesh = mesh
        arr = np.broadcast_to(np.asarray(phi, dtype=float), (mesh.n_nodes,))
        self.phi = np.clip(arr, -1.0, 1.0)
        self.char_length = float(char_length)

    def copy(self) -> "LevelSetField":
        return LevelSetField(self.mesh, self.phi.copy(), self.char_length)

    def characteristic(self) -> np.ndarray:
        return characteristic(self)

    def material_volume(self) -> float:
        return float(self.mesh.element_volumes @ self.characteristic())


def characteristic(field: LevelSetField) -> np.ndarray:
    """Per-element material fraction: mean of nodal indicators phi >= 0."""
    indicator = (field.phi >= 0.0).astype(float)
    return indicator[field.mesh.elements].mean(axis=1)


def nodal_material_indicator(field: LevelSetField) -> np.ndarray:
    return (field.phi >= 0.0).astype(float)


def normalize_sensitivity(mesh: SimplexMesh, values: np.ndarray) -> np.ndarray:
    """Scale a nodal field by 1 / (volume-weighted mean of |values|).

    Makes step sizes independent of mesh and problem scaling.  A zero
    field is returned unchanged.
    """
    values = np.asarray(values, dtype=float)
    mean_abs = float(mesh.lumped_mass @ np.abs(values)) / mesh.domain_measure
    if mean_abs <= 0.0:
        return np.zeros_like(values)
    return values / mean_abs


class Evolver:
    """Precomputed reaction-diffusion step operator for one mesh + params.

    The system matrix (lumped mass / dt + rate * tau * stiffness) does
    not depend on the current design, so repeated steps reuse it.
    """

    def __init__(self, mesh: SimplexMesh, params: EvolutionParams,
                 solver_tol: float = 1e-10):
        self.mesh = mesh
        self.params = params
        self.solver_tol = solver_tol
        self.lumped = mesh.lumped_mass
        stiff = fem_core.scalar_stiffness_matrix(mesh, 1.0)
        mat = sp.diags(self.lumped / params.time_step) + params.rate * params.tau * stiff
        if params.material_boundary_tag:
            fixed = mesh.tag_nodes(params.material_boundary_tag)
        else:
            fixed = np.empty(0, dtype=np.int64)
        self._mat = mat.tocsr()
        self._fixed = fixed
        self._fixed_vals = np.ones(len(fixed))

    def step_raw(self, phi: np.ndarray, sensitivity: np.ndarray,
                 x0: np.ndarray | None = None) -> np.ndarray:
        """One unclamped step; the result is affine in ``sensitivity``."""
        p = self.params
        load = self.lumped * (phi / p.time_step - p.rate * np.asarray(sensitivity))
        system = fem_core.eliminate_dirichlet(
            self._mat, load, self._fixed, self._fixed_vals, self.mesh.n_nodes
        )
        return fem_core.solve(system, tol=self.solver_tol, x0=x0)

    def step(self, field: LevelSetField, sensitivity: np.ndarray,
             x0: np.ndarray | None = None) -> LevelSetField:
        raw = self.step_raw(field.phi, sensitivity, x0=x0)
        return LevelSetField(field.mesh, np.clip(raw, -1.0, 1.0), field.char_length)


def evolve(field: LevelSetField, sensitivity: np.ndarray,
           params: EvolutionParams) -> LevelSetField:
    """Advance the level-set field by one reaction-diffusion step.

    Solves (M/dt + rate*tau*S) phi_new = M phi/dt - rate*M*sensitivity
    with zero-flux boundaries (and phi = 1 on the material-connected
    tag, when configured), then clamps to [-1, 1].
    """
    sensitivity = np.asarray(sensitivity, dtype=float)
    if sensitivity.shape != (field.mesh.n_nodes,):
        raise InvalidSpecError("sensitivity must be a nodal field")
    return Evolver(field.mesh, params).step(field, sensitivity, x0=field.phi)

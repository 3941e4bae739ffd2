"""Governing physics for the optimization demos and their sensitivities.

Two self-adjoint problems are supported: minimum mean compliance of a
linear elastic structure under boundary traction, and steady heat
conduction with internal generation (thermal compliance).  Void elements
keep a small ersatz stiffness/conductivity so the discrete systems stay
positive definite for any design.

Both topological-derivative fields are quadratic forms in the solution
gradients, evaluated per element from the P1 solution, multiplied by the
local material fraction so they vanish in void, and zeroed on non-design
elements.  They measure the cost of removing material: the optimizer
feeds their negation into the level-set update, where positive values
mean "remove".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from topopt import fem_core
from topopt.errors import InvalidCoefficientError, SolverError
from topopt.mesh import SimplexMesh


@dataclass
class PhysicsSolution:
    """Nodal solution field plus the objective value it realizes."""

    field: np.ndarray
    objective: float


@dataclass
class ComplianceCase:
    """Minimum mean compliance setup.

    ``traction`` (force per boundary area) acts on ``traction_tag``;
    displacements vanish on ``fixed_tag``.  Void elements keep
    ``ersatz`` times the material stiffness.  ``nondesign_elements``
    are pinned to material and excluded from the sensitivity.
    """

    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    traction: tuple[float, ...] = (0.0, -1.0)
    traction_tag: str = "gamma_t"
    fixed_tag: str = "gamma_u"
    ersatz: float = 1e-3
    nondesign_elements: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.ersatz < 1.0:
            raise InvalidCoefficientError("ersatz factor must lie in (0, 1)")

    def apply_nondesign(self, chi: np.ndarray) -> np.ndarray:
        return _pin_nondesign(chi, self.nondesign_elements)


@dataclass
class ThermalCase:
    """Steady internal-heat-generation setup (thermal compliance).

    Uniform volumetric source ``heat_source``; temperature fixed to zero
    on ``temp_tag``; void elements conduct with ``kappa_void``.
    """

    kappa_material: float = 26.0
    kappa_void: float = 2.23e-2
    heat_source: float = 1.0
    temp_tag: str = "gamma_temp"
    nondesign_elements: np.ndarray | None = None

    def __post_init__(self):
        if not self.kappa_material > self.kappa_void > 0.0:
            raise InvalidCoefficientError(
                "kappa_material must exceed kappa_void, both positive"
            )
        if self.heat_source < 0.0:
            raise InvalidCoefficientError("heat_source must be nonnegative")

    def apply_nondesign(self, chi: np.ndarray) -> np.ndarray:
        return _pin_nondesign(chi, self.nondesign_elements)


def _pin_nondesign(chi: np.ndarray, elements) -> np.ndarray:
    chi = np.asarray(chi, dtype=float)
    if elements is None or len(elements) == 0:
        return chi
    pinned = chi.copy()
    pinned[elements] = 1.0
    return pinned


# -- compliance ---------------------------------------------------------------


def traction_load(mesh: SimplexMesh, case: ComplianceCase) -> np.ndarray:
    """Consistent nodal load vector of the boundary traction."""
    d = mesh.dim
    load = np.zeros(mesh.n_nodes * d)
    t = np.asarray(case.traction, dtype=float)
    facets = mesh.tag_facets(case.traction_tag)
    nodes = mesh.boundary_facets[facets]
    share = mesh.facet_measures[facets][:, None] / d
    for comp in range(d):
        np.add.at(load, nodes * d + comp, share * t[comp])
    return load


def solve_compliance(mesh: SimplexMesh, chi: np.ndarray, case: ComplianceCase,
                     tol: float = 1e-8, x0: np.ndarray | None = None) -> PhysicsSolution:
    """Solve elasticity on the current design; objective is traction work."""
    chi = case.apply_nondesign(chi)
    if chi.max(initial=0.0) <= 0.0:
        raise SolverError("all-void design: elasticity system is near singular")
    scale = case.ersatz + (1.0 - case.ersatz) * chi
    problem = fem_core.ElasticityProblem(
        youngs_modulus=case.youngs_modulus,
        poisson_ratio=case.poisson_ratio,
        stiffness_scale=scale,
        tractions={case.traction_tag: case.traction},
        dirichlet={case.fixed_tag: tuple(0.0 for _ in range(mesh.dim))},
    )
    u = fem_core.solve(fem_core.assemble_elasticity(mesh, problem), tol=tol, x0=x0)
    objective = float(traction_load(mesh, case) @ u)
    return PhysicsSolution(field=u, objective=objective)


def removal_cost_prefactor(e_mod: float, nu: float) -> float:
    """Scalar prefactor of the compliance removal-cost quadratic form."""
    return 3.0 * (1.0 - nu) / (2.0 * (1.0 + nu) * (7.0 - 5.0 * nu))


def compliance_topological_derivative(mesh: SimplexMesh, u: np.ndarray,
                                      chi: np.ndarray,
                                      case: ComplianceCase) -> np.ndarray:
    """Per-element cost of nucleating a hole, >= 0 in material.

    Quadratic form in the strain with the three-dimensional coefficient
    tensor; plane-strain meshes evaluate the same form on the embedded
    strain (eps_zz = 0).
    """
    chi = case.apply_nondesign(np.asarray(chi, dtype=float))
    e_mod, nu = case.youngs_modulus, case.poisson_ratio
    b = fem_core.strain_displacement(mesh)
    d = mesh.dim
    edofs = (mesh.elements[:, :, None] * d + np.arange(d)[None, None, :]).reshape(
        mesh.n_elements, -1
    )
    eps = np.einsum("evi,ei->ev", b, np.asarray(u, dtype=float)[edofs])
    if d == 2:
        trace = eps[:, 0] + eps[:, 1]
        contraction = eps[:, 0] ** 2 + eps[:, 1] ** 2 + 0.5 * eps[:, 2] ** 2
    else:
        trace = eps[:, 0] + eps[:, 1] + eps[:, 2]
        contraction = (eps[:, :3] ** 2).sum(axis=1) + 0.5 * (eps[:, 3:] ** 2).sum(axis=1)
    trace_coeff = -(1.0 - 14.0 * nu + 15.0 * nu**2) * e_mod / (1.0 - 2.0 * nu) ** 2
    value = removal_cost_prefactor(e_mod, nu) * (
        trace_coeff * trace**2 + 10.0 * e_mod * contraction
    )
    value = value * chi
    if case.nondesign_elements is not None:
        value[case.nondesign_elements] = 0.0
    return value


# -- thermal ------------------------------------------------------------------


def heat_load(mesh: SimplexMesh, case: ThermalCase) -> np.ndarray:
    """Consistent nodal load of the uniform volumetric heat source."""
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.elements,
              (case.heat_source * mesh.element_volumes / (mesh.dim + 1))[:, None])
    return load


def interpolated_conductivity(chi: np.ndarray, case: ThermalCase) -> np.ndarray:
    chi = np.asarray(chi, dtype=float)
    return case.kappa_void + (case.kappa_material - case.kappa_void) * chi


def solve_thermal(mesh: SimplexMesh, chi: np.ndarray, case: ThermalCase,
                  tol: float = 1e-8, x0: np.ndarray | None = None) -> PhysicsSolution:
    """Solve heat conduction; objective is source-weighted temperature."""
    chi = case.apply_nondesign(chi)
    problem = fem_core.ScalarDiffusionProblem(
        diffusion=interpolated_conductivity(chi, case),
        reaction=0.0,
        source=case.heat_source,
        dirichlet={case.temp_tag: 0.0},
    )
    u = fem_core.solve(fem_core.assemble_scalar(mesh, problem), tol=tol, x0=x0)
    objective = float(heat_load(mesh, case) @ u)
    return PhysicsSolution(field=u, objective=objective)


def thermal_topological_derivative(mesh: SimplexMesh, u_t: np.ndarray,
                                   chi: np.ndarray, case: ThermalCase) -> np.ndarray:
    """Per-element removal cost (2/3) kappa |grad u|^2, zero in void."""
    chi = case.apply_nondesign(np.asarray(chi, dtype=float))
    grad = fem_core.element_gradients(mesh, u_t)
    kappa = interpolated_conductivity(chi, case)
    value = (2.0 / 3.0) * kappa * np.einsum("ed,ed->e", grad, grad) * chi
    if case.nondesign_elements is not None:
        value[case.nondesign_elements] = 0.0
    return value

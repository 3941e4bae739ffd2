"""Enclosed-cavity detection field, constraint functional and sensitivities.

Powder-bed additive manufacturing cannot build parts with voids that are
sealed off from the outside, because unsintered powder stays trapped.
This module detects such cavities with an auxiliary steady
diffusion-reaction field ``p``: the void region carries a source driving
``p`` toward 1 and a large diffusion coefficient, the material region a
tiny diffusion coefficient, and the powder-escape boundary holds
``p = 0``.  Voids connected to the escape boundary flush to ``p ~ 0``;
sealed voids saturate at ``p ~ 1``.  The integral of the positive part
of ``p`` is the constraint functional, and an adjoint solve with a unit
step source yields the topological derivative that tells the optimizer
where opening or sealing material reduces the violation.

All fields here are dimensionless: diffusion coefficients are scaled by
the squared characteristic length so the same parameter ranges work for
any domain size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from topopt import fem_core
from topopt.errors import InvalidCoefficientError
from topopt.mesh import SimplexMesh

# Values of p below this count as "no violation" for the adjoint source.
P_SOURCE_TOL = 1e-9


@dataclass(frozen=True)
class CavityModelParams:
    """Coefficients of the cavity-detection field.

    ``void_diffusion`` is the (large) dimensionless diffusion coefficient
    in the void region, ``material_diffusion`` the (tiny) one in material;
    both get multiplied by ``char_length**2``.  ``escape_tag`` names the
    boundary through which powder can leave (Dirichlet p = 0).
    """

    void_diffusion: float = 1e2
    material_diffusion: float = 1e-5
    char_length: float = 1.0
    escape_tag: str = "gamma_p"

    def __post_init__(self):
        if not self.void_diffusion > self.material_diffusion > 0.0:
            raise InvalidCoefficientError(
                "void_diffusion must exceed material_diffusion, both positive"
            )
        if self.char_length <= 0.0:
            raise InvalidCoefficientError("char_length must be positive")
        if not self.escape_tag:
            raise InvalidCoefficientError("escape_tag must name a boundary tag")


@dataclass
class FictitiousField:
    """Solution bundle: state, adjoint, constraint value and derivative."""

    p: np.ndarray
    adjoint: np.ndarray | None = None
    constraint_value: float = 0.0
    topological_derivative: np.ndarray | None = None


def diffusion_coefficient(chi, params: CavityModelParams) -> np.ndarray:
    """Interpolated diffusion coefficient ((a_void - a_mat)(1 - chi) + a_mat) L^2."""
    chi = np.asarray(chi, dtype=float)
    a = (params.void_diffusion - params.material_diffusion) * (1.0 - chi)
    return (a + params.material_diffusion) * params.char_length**2


def solve_fictitious(mesh: SimplexMesh, chi: np.ndarray, params: CavityModelParams,
                     tol: float = 1e-8, x0: np.ndarray | None = None) -> np.ndarray:
    """Solve -div(a grad p) + (1 - chi)(p - 1) = 0 with p = 0 on the escape tag."""
    chi = np.asarray(chi, dtype=float)
    problem = fem_core.ScalarDiffusionProblem(
        diffusion=diffusion_coefficient(chi, params),
        reaction=1.0 - chi,
        source=1.0 - chi,
        dirichlet={params.escape_tag: 0.0},
    )
    return fem_core.solve(fem_core.assemble_scalar(mesh, problem), tol=tol, x0=x0)


def constraint_value(mesh: SimplexMesh, p: np.ndarray) -> float:
    """Integral over the domain of max(p, 0) by nodal P1 quadrature."""
    return float(mesh.lumped_mass @ np.maximum(np.asarray(p, dtype=float), 0.0))


def solve_adjoint(mesh: SimplexMesh, chi: np.ndarray, p: np.ndarray,
                  params: CavityModelParams, tol: float = 1e-8,
                  x0: np.ndarray | None = None) -> np.ndarray:
    """Solve the adjoint: same operator as the state, source -step(p).

    The source is the exact unit step of ``p`` evaluated at nodes (with a
    tiny tolerance so solver noise does not trigger it), averaged per
    element like every other elementwise coefficient.
    """
    chi = np.asarray(chi, dtype=float)
    step = (np.asarray(p, dtype=float) >= P_SOURCE_TOL).astype(float)
    problem = fem_core.ScalarDiffusionProblem(
        diffusion=diffusion_coefficient(chi, params),
        reaction=1.0 - chi,
        source=-fem_core.element_means(mesh, step),
        dirichlet={params.escape_tag: 0.0},
    )
    return fem_core.solve(fem_core.assemble_scalar(mesh, problem), tol=tol, x0=x0)


def gradient_coupling_coefficient(chi, dim: int, params: CavityModelParams) -> np.ndarray:
    """Coefficient of the grad(p).grad(adjoint) term of the topological derivative.

    Piecewise in the material fraction, with separate closed forms for
    two and three dimensions.
    """
    chi = np.asarray(chi, dtype=float)
    a, e, l2 = params.void_diffusion, params.material_diffusion, params.char_length**2
    if dim == 2:
        void_part = 2.0 * a * (e - a) / (a + e)
        mat_part = -2.0 * e * (a - e) / (e + a)
    elif dim == 3:
        void_part = 3.0 * a * (e - a) / (2.0 * a + e)
        mat_part = -3.0 * e * (a - e) / (2.0 * e + a)
    else:
        raise InvalidCoefficientError(f"dimension must be 2 or 3, got {dim}")
    return (void_part * (1.0 - chi) + mat_part * chi) * l2


def topological_derivative(mesh: SimplexMesh, chi: np.ndarray, p: np.ndarray,
                           adjoint: np.ndarray, params: CavityModelParams) -> np.ndarray:
    """Per-element topological derivative of the constraint functional.

    Positive values drive material removal in the level-set update.  The
    reaction term is damped by (1 - chi) so it vanishes in solid
    elements, which stabilizes the iteration.
    """
    chi = np.asarray(chi, dtype=float)
    grad_p = fem_core.element_gradients(mesh, p)
    grad_adj = fem_core.element_gradients(mesh, adjoint)
    coupling = gradient_coupling_coefficient(chi, mesh.dim, params)
    p_e = fem_core.element_means(mesh, p)
    adj_e = fem_core.element_means(mesh, adjoint)
    first = coupling * np.einsum("ed,ed->e", grad_p, grad_adj)
    second = (1.0 - chi) * (p_e - 1.0) * adj_e
    return first - second


def evaluate(mesh: SimplexMesh, chi: np.ndarray, params: CavityModelParams,
             with_derivative: bool = True, tol: float = 1e-8,
             p0: np.ndarray | None = None,
             adj0: np.ndarray | None = None) -> FictitiousField:
    """Solve the state (and optionally adjoint + derivative) for one design."""
    p = solve_fictitious(mesh, chi, params, tol=tol, x0=p0)
    result = FictitiousField(p=p, constraint_value=constraint_value(mesh, p))
    if with_derivative:
        result.adjoint = solve_adjoint(mesh, chi, p, params, tol=tol, x0=adj0)
        result.topological_derivative = topological_derivative(
            mesh, chi, p, result.adjoint, params
        )
    return result

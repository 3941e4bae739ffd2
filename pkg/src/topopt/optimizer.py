"""Optimization loop coupling physics, cavity constraint and level-set update.

Each iteration: evaluate the governing physics and the cavity-detection
field on the current design, check convergence, solve the cavity
adjoint, combine sensitivities, and advance the level set by one
reaction-diffusion step.

Multiplier strategy
-------------------
* Volume: the update is affine in the sensitivity field, so the level-set
  step is solved once for the base sensitivity and once for a unit
  removal drive on material nodes; the volume multiplier is then found by
  bisection on the resulting one-parameter family so the post-step volume
  tracks ``max(V_max, current * (1 - volume_descent))``.  This yields a
  smooth, controlled volume reduction with exactly two linear solves per
  iteration.
* Cavity: an augmented-Lagrangian style multiplier grows with the
  normalized constraint value and is capped; it weights the (normalized)
  cavity topological derivative in the combined sensitivity.

Objective topological derivatives measure the cost of removing material,
so they enter the combined field negated: expensive material is pulled
toward solid, cheap material is released for the volume drive to remove.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable

import numpy as np

from topopt import cavity_constraint, physics
from topopt.errors import ConfigurationError, InvalidSpecError, SolverError
from topopt.levelset import (
    EvolutionParams,
    Evolver,
    LevelSetField,
    characteristic,
    nodal_material_indicator,
    normalize_sensitivity,
)
from topopt.mesh import SimplexMesh


@dataclass(frozen=True)
class StopCriteria:
    """Convergence and iteration-budget settings.

    Converged means: at least two evaluations, relative objective spread
    over the trailing window below ``objective_rtol``, volume within
    ``volume_rtol`` (relative to the bound), and, when the cavity
    constraint is enforced, normalized constraint value below
    ``cavity_tol``.
    """

    max_iterations: int = 200
    objective_window: int = 5
    objective_rtol: float = 1e-3
    volume_rtol: float = 1e-2
    cavity_tol: float = 5e-3

    def __post_init__(self):
        if self.max_iterations < 0:
            raise InvalidSpecError("max_iterations must be nonnegative")
        if min(self.objective_rtol, self.volume_rtol, self.cavity_tol) <= 0:
            raise InvalidSpecError("tolerances must be positive")
        if self.objective_window < 2:
            raise InvalidSpecError("objective_window must be at least 2")


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    objective: float
    volume_fraction: float
    g_vol: float
    j_h: float
    lambda_vol: float
    lambda_h: float

    CSV_HEADER = "iter,objective,volume_fraction,G_vol,J_h,lambda_vol,lambda_h"

    def to_csv(self) -> str:
        return ",".join(
            [str(self.iteration)]
            + [f"{v:.12g}" for v in (self.objective, self.volume_fraction, self.g_vol,
                                     self.j_h, self.lambda_vol, self.lambda_h)]
        )


@dataclass
class OptimizationState:
    """Mutable state of one optimization run."""

    field: LevelSetField
    iteration: int = 0
    lambda_vol: float = 0.0
    lambda_h: float = 0.0
    history: list[HistoryRow] = dataclass_field(default_factory=list)
    converged: bool = False

    def history_csv(self) -> str:
        lines = [HistoryRow.CSV_HEADER] + [row.to_csv() for row in self.history]
        return "\n".join(lines) + "\n"


@dataclass
class OptimizationProblem:
    """Everything run() needs besides stopping criteria.

    ``volume_max`` is an absolute measure (same units as the domain).
    ``cavity_constrained=False`` still evaluates the detection field for
    reporting but neither solves the adjoint nor enforces the constraint.
    """

    mesh: SimplexMesh
    physics_case: "physics.ComplianceCase | physics.ThermalCase"
    evolution: EvolutionParams
    volume_max: float
    cavity: cavity_constraint.CavityModelParams | None = None
    cavity_constrained: bool = True
    char_length: float = 1.0
    phi_init: "float | np.ndarray" = 1.0
    volume_descent: float = 0.02
    volume_band: float = 5e-3
    volume_relaxation: float = 0.5
    move_limit: float = 0.2
    cavity_penalty_rate: float = 10.0
    cavity_penalty_cap: float = 1e3
    solver_tol: float = 1e-8

    def __post_init__(self):
        if self.cavity is None:
            self.cavity = cavity_constraint.CavityModelParams(
                char_length=self.char_length
            )
        if not 0.0 < self.volume_max <= self.mesh.domain_measure * (1 + 1e-12):
            raise ConfigurationError("volume_max must lie in (0, domain measure]")
        if not 0.0 < self.volume_descent < 1.0:
            raise ConfigurationError("volume_descent must lie in (0, 1)")


def combined_sensitivity(objective_sens: np.ndarray, cavity_sens: np.ndarray,
                         material_indicator: np.ndarray, lambda_vol: float,
                         lambda_h: float, mesh: SimplexMesh) -> np.ndarray:
    """Compose the nodal level-set drive from its three ingredients.

    Each contribution is normalized by its volume-weighted mean absolute
    value, making the composition invariant to positive rescaling of the
    inputs; the volume term is a uniform unit removal drive on material
    nodes.  Positive output drives material removal.
    """
    base = normalize_sensitivity(mesh, objective_sens)
    if lambda_h != 0.0:
        base = base + lambda_h * normalize_sensitivity(mesh, cavity_sens)
    return base + lambda_vol * np.asarray(material_indicator, dtype=float)


def run(problem: OptimizationProblem, stop: StopCriteria,
        observer: "Callable[[OptimizationState, dict], None] | None" = None
        ) -> OptimizationState:
    """Execute the optimization loop until convergence or iteration budget.

    Sub-solver failures abort with iteration context; exhausting the
    budget returns a state flagged not converged.  The optional
    ``observer`` is called after every evaluation with the state and the
    freshly computed fields (for snapshotting).
    """
    mesh = problem.mesh
    case = problem.physics_case
    is_compliance = isinstance(case, physics.ComplianceCase)
    evolver = Evolver(mesh, problem.evolution)
    state = OptimizationState(
        field=LevelSetField(mesh, problem.phi_init, problem.char_length)
    )
    domain = mesh.domain_measure
    nondesign_nodes = _nondesign_nodes(mesh, case.nondesign_elements)

    solution = fict = None
    objectives: list[float] = []

    for iteration in range(stop.max_iterations + 1):
        state.iteration = iteration
        chi = case.apply_nondesign(characteristic(state.field))
        try:
            if is_compliance:
                solution = physics.solve_compliance(
                    mesh, chi, case, tol=problem.solver_tol,
                    x0=None if solution is None else solution.field,
                )
            else:
                solution = physics.solve_thermal(
                    mesh, chi, case, tol=problem.solver_tol,
                    x0=None if solution is None else solution.field,
                )
            fict = cavity_constraint.evaluate(
                mesh, chi, problem.cavity,
                with_derivative=False, tol=problem.solver_tol,
                p0=None if fict is None else fict.p,
            )
        except SolverError as exc:
            raise SolverError(
                f"iteration {iteration}: {exc}", residual=exc.residual
            ) from exc

        objectives.append(solution.objective)
        volume = float(mesh.element_volumes @ chi)
        j_h_norm = fict.constraint_value / domain
        state.converged = _converged(objectives, volume, j_h_norm, problem, stop)

        if observer is not None:
            observer(state, {
                "chi": chi, "solution": solution, "fictitious": fict,
                "volume": volume, "is_final": state.converged
                or iteration == stop.max_iterations,
            })
        if state.converged or iteration == stop.max_iterations:
            state.history.append(_row(iteration, solution.objective, volume,
                                      j_h_norm, problem, state, domain))
            break

        # Sensitivities (adjoint solve only when the constraint is enforced).
        if is_compliance:
            removal_cost = physics.compliance_topological_derivative(
                mesh, solution.field, chi, case
            )
        else:
            removal_cost = physics.thermal_topological_derivative(
                mesh, solution.field, chi, case
            )
        objective_sens = mesh.element_to_nodal(-removal_cost)

        cavity_sens = np.zeros(mesh.n_nodes)
        if problem.cavity_constrained:
            try:
                adjoint = cavity_constraint.solve_adjoint(
                    mesh, chi, fict.p, problem.cavity, tol=problem.solver_tol,
                )
            except SolverError as exc:
                raise SolverError(
                    f"iteration {iteration} (adjoint): {exc}", residual=exc.residual
                ) from exc
            td_cavity = cavity_constraint.topological_derivative(
                mesh, chi, fict.p, adjoint, problem.cavity
            )
            if case.nondesign_elements is not None:
                td_cavity[case.nondesign_elements] = 0.0
            cavity_sens = mesh.element_to_nodal(td_cavity)
            state.lambda_h = min(
                problem.cavity_penalty_cap,
                state.lambda_h + problem.cavity_penalty_rate * j_h_norm,
            )

        material = nodal_material_indicator(state.field)
        if len(nondesign_nodes):
            material[nondesign_nodes] = 0.0
        base = combined_sensitivity(objective_sens, cavity_sens, material,
                                    0.0, state.lambda_h, mesh)

        target = max(problem.volume_max, volume * (1.0 - problem.volume_descent))
        phi_base = evolver.step_raw(state.field.phi, base, x0=state.field.phi)
        phi_unit = evolver.step_raw(state.field.phi, base + material, x0=phi_base)
        delta = phi_unit - phi_base
        # Re-bisect only when the previous multiplier no longer tracks the
        # target, and move toward the bisected value under-relaxed: a hard
        # volume projection every step couples with the threshold dynamics
        # of the update into a period-2 limit cycle.  The bisection sees the
        # uncapped step; the realized update below is additionally move
        # limited, which only slows the tracking, never diverges it.
        band = problem.volume_band * target
        vol_prev = _volume_of_phi(
            mesh, case, np.clip(phi_base + state.lambda_vol * delta, -1.0, 1.0)
        )
        if not target - band <= vol_prev <= target:
            lam_star = _bisect_volume(mesh, case, phi_base, delta, target)
            state.lambda_vol += problem.volume_relaxation * (lam_star - state.lambda_vol)
        lam = state.lambda_vol

        state.history.append(_row(iteration, solution.objective, volume,
                                  j_h_norm, problem, state, domain))
        # Trust-region style cap on the per-step level-set change: a node
        # deep in material needs several consistent removal steps to flip,
        # so transient multiplier spikes cannot sever a member outright.
        lo = np.maximum(-1.0, state.field.phi - problem.move_limit)
        hi = np.minimum(1.0, state.field.phi + problem.move_limit)
        new_phi = np.clip(phi_base + lam * delta, lo, hi)
        state.field = LevelSetField(mesh, new_phi, problem.char_length)

    return state


def _row(iteration, objective, volume, j_h_norm, problem, state, domain) -> HistoryRow:
    return HistoryRow(
        iteration=iteration,
        objective=objective,
        volume_fraction=volume / domain,
        g_vol=volume - problem.volume_max,
        j_h=j_h_norm,
        lambda_vol=state.lambda_vol,
        lambda_h=state.lambda_h,
    )


def _converged(objectives, volume, j_h_norm, problem, stop) -> bool:
    if len(objectives) < 2:
        return False
    window = objectives[-min(stop.objective_window, len(objectives)):]
    spread = max(window) - min(window)
    scale = max(abs(window[-1]), 1e-300)
    if spread / scale >= stop.objective_rtol:
        return False
    if volume > problem.volume_max * (1.0 + stop.volume_rtol):
        return False
    if problem.cavity_constrained and j_h_norm > stop.cavity_tol:
        return False
    return True


def _nondesign_nodes(mesh, nondesign_elements) -> np.ndarray:
    if nondesign_elements is None or len(nondesign_elements) == 0:
        return np.empty(0, dtype=np.int64)
    return np.unique(mesh.elements[nondesign_elements])


def _volume_of_phi(mesh, case, phi) -> float:
    indicator = (phi >= 0.0).astype(float)
    chi = indicator[mesh.elements].mean(axis=1)
    chi = case.apply_nondesign(chi)
    return float(mesh.element_volumes @ chi)


def _bisect_volume(mesh, case, phi_base, delta, target, iters: int = 60) -> float:
    """Smallest lambda >= 0 with volume(clip(phi_base + lambda*delta)) <= target."""

    def vol(lam):
        return _volume_of_phi(mesh, case, np.clip(phi_base + lam * delta, -1.0, 1.0))

    if vol(0.0) <= target:
        return 0.0
    hi = 1.0
    for _ in range(60):
        if vol(hi) <= target:
            break
        hi *= 2.0
    else:
        return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if vol(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi

"""P1 finite-element assembly and iterative solution on simplex meshes.

Covers the two problem classes the toolkit needs: scalar
diffusion-reaction equations (design-field transport, heat conduction,
level-set smoothing) and small-strain linear elasticity.  All element
quantities are piecewise constant; shape-function gradients come
precomputed from the mesh, so element matrices reduce to closed-form
expressions and assembly is fully vectorized.

Dirichlet conditions are eliminated symmetrically: the returned
:class:`SparseSystem` holds the reduced SPD matrix on free dofs, the
reduced right-hand side, and the index map needed to scatter a reduced
solution back to the full dof vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from topopt.errors import ConfigurationError, InvalidCoefficientError, SolverError
from topopt.mesh import SimplexMesh


@dataclass
class ScalarDiffusionProblem:
    """-div(a grad u) + c u = s with Dirichlet tags, zero flux elsewhere.

    ``diffusion``, ``reaction`` and ``source`` are per-element values;
    ``dirichlet`` maps boundary tag names to a constant or a callable on
    node coordinates.
    """

    diffusion: np.ndarray
    reaction: np.ndarray | float = 0.0
    source: np.ndarray | float = 0.0
    dirichlet: Mapping[str, object] = field(default_factory=dict)


@dataclass
class ElasticityProblem:
    """Linear isotropic elasticity with per-element stiffness scaling.

    ``stiffness_scale`` multiplies the elastic tensor per element (the
    material interpolation); ``tractions`` maps boundary tags to traction
    vectors applied as consistent facet loads.
    """

    youngs_modulus: float
    poisson_ratio: float
    stiffness_scale: np.ndarray | float = 1.0
    tractions: Mapping[str, np.ndarray] = field(default_factory=dict)
    dirichlet: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise InvalidCoefficientError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise InvalidCoefficientError("Poisson ratio must lie in (-1, 0.5)")


@dataclass
class SparseSystem:
    """Symmetric positive-definite system after Dirichlet elimination."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    values: np.ndarray  # full-length vector holding Dirichlet values
    n_dofs: int

    def scatter(self, reduced: np.ndarray) -> np.ndarray:
        full = self.values.copy()
        full[self.free] = reduced
        return full


# -- element matrices ---------------------------------------------------------


def scalar_stiffness_matrix(mesh: SimplexMesh, coeff) -> sp.csr_matrix:
    """Assemble sum_e a_e |e| grad N_i . grad N_j as a full CSR matrix."""
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_elements,))
    g = mesh.shape_gradients  # (E, d+1, d)
    ke = np.einsum("eid,ejd->eij", g, g) * (coeff * mesh.element_volumes)[:, None, None]
    return _assemble(mesh.elements, ke, mesh.n_nodes)


def scalar_mass_matrix(mesh: SimplexMesh, coeff) -> sp.csr_matrix:
    """Consistent P1 mass matrix weighted by a per-element coefficient."""
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_elements,))
    npe = mesh.dim + 1
    base = (np.ones((npe, npe)) + np.eye(npe)) / ((npe) * (npe + 1))
    ke = base[None, :, :] * (coeff * mesh.element_volumes)[:, None, None]
    return _assemble(mesh.elements, ke, mesh.n_nodes)


def _assemble(elements: np.ndarray, ke: np.ndarray, n_dofs: int) -> sp.csr_matrix:
    npe = elements.shape[1]
    rows = np.repeat(elements, npe, axis=1).ravel()
    cols = np.tile(elements, (1, npe)).ravel()
    mat = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n_dofs, n_dofs))
    return mat.tocsr()


def assemble_scalar(mesh: SimplexMesh, problem: ScalarDiffusionProblem) -> SparseSystem:
    """Assemble the scalar diffusion-reaction system with eliminated Dirichlet rows."""
    diffusion = np.broadcast_to(np.asarray(problem.diffusion, dtype=float),
                                (mesh.n_elements,))
    if np.any(diffusion <= 0.0):
        raise InvalidCoefficientError("diffusion coefficient must be positive on every element")
    mat = scalar_stiffness_matrix(mesh, diffusion)
    reaction = np.asarray(problem.reaction, dtype=float)
    if np.any(reaction != 0.0):
        mat = mat + scalar_mass_matrix(mesh, reaction)

    load = np.zeros(mesh.n_nodes)
    source = np.broadcast_to(np.asarray(problem.source, dtype=float), (mesh.n_elements,))
    np.add.at(load, mesh.elements,
              (source * mesh.element_volumes / (mesh.dim + 1))[:, None])

    fixed_idx, fixed_val = _dirichlet_scalar(mesh, problem.dirichlet)
    return eliminate_dirichlet(mat, load, fixed_idx, fixed_val, mesh.n_nodes)


def assemble_elasticity(mesh: SimplexMesh, problem: ElasticityProblem) -> SparseSystem:
    """Assemble P1 elasticity with consistent traction loads on tagged facets.

    2D meshes use the plane-strain elastic tensor.
    """
    d = mesh.dim
    scale = np.broadcast_to(np.asarray(problem.stiffness_scale, dtype=float),
                            (mesh.n_elements,))
    if np.any(scale <= 0.0):
        raise InvalidCoefficientError("stiffness scale must stay above the ersatz floor")

    dmat = elastic_tensor(d, problem.youngs_modulus, problem.poisson_ratio)
    b = strain_displacement(mesh)  # (E, nvoigt, d*(d+1))
    ke = np.einsum("evi,vw,ewj->eij", b, dmat, b)
    ke *= (scale * mesh.element_volumes)[:, None, None]
    edofs = (mesh.elements[:, :, None] * d + np.arange(d)[None, None, :]).reshape(
        mesh.n_elements, -1
    )
    mat = _assemble(edofs, ke, mesh.n_nodes * d)

    load = np.zeros(mesh.n_nodes * d)
    for tag, traction in problem.tractions.items():
        t = np.asarray(traction, dtype=float)
        if t.shape != (d,):
            raise ConfigurationError(f"traction on '{tag}' must be a {d}-vector")
        facets = mesh.tag_facets(tag)
        if len(facets) == 0:
            raise ConfigurationError(f"traction tag '{tag}' matches no boundary facets")
        nodes = mesh.boundary_facets[facets]  # (F, d)
        share = mesh.facet_measures[facets][:, None] / d  # per facet node
        for comp in range(d):
            np.add.at(load, nodes * d + comp, share * t[comp])

    fixed_idx, fixed_val = _dirichlet_vector(mesh, problem.dirichlet)
    return eliminate_dirichlet(mat, load, fixed_idx, fixed_val, mesh.n_nodes * d)


def elastic_tensor(dim: int, e_mod: float, nu: float) -> np.ndarray:
    """Isotropic elastic tensor in Voigt form (plane strain for dim=2)."""
    lam = e_mod * nu / ((1 + nu) * (1 - 2 * nu))
    mu = e_mod / (2 * (1 + nu))
    if dim == 2:
        return np.array([
            [lam + 2 * mu, lam, 0.0],
            [lam, lam + 2 * mu, 0.0],
            [0.0, 0.0, mu],
        ])
    dmat = np.zeros((6, 6))
    dmat[:3, :3] = lam
    dmat[np.arange(3), np.arange(3)] = lam + 2 * mu
    dmat[np.arange(3, 6), np.arange(3, 6)] = mu
    return dmat


def strain_displacement(mesh: SimplexMesh) -> np.ndarray:
    """Per-element B matrices mapping nodal displacements to Voigt strains.

    Voigt order: (xx, yy, xy) in 2D; (xx, yy, zz, yz, xz, xy) in 3D,
    with engineering shear strains.
    """
    g = mesh.shape_gradients  # (E, npe, d)
    n_el, npe, d = g.shape
    nv = 3 if d == 2 else 6
    b = np.zeros((n_el, nv, npe * d))
    cols = np.arange(npe) * d
    if d == 2:
        b[:, 0, cols + 0] = g[:, :, 0]
        b[:, 1, cols + 1] = g[:, :, 1]
        b[:, 2, cols + 0] = g[:, :, 1]
        b[:, 2, cols + 1] = g[:, :, 0]
    else:
        b[:, 0, cols + 0] = g[:, :, 0]
        b[:, 1, cols + 1] = g[:, :, 1]
        b[:, 2, cols + 2] = g[:, :, 2]
        b[:, 3, cols + 1] = g[:, :, 2]
        b[:, 3, cols + 2] = g[:, :, 1]
        b[:, 4, cols + 0] = g[:, :, 2]
        b[:, 4, cols + 2] = g[:, :, 0]
        b[:, 5, cols + 0] = g[:, :, 1]
        b[:, 5, cols + 1] = g[:, :, 0]
    return b


# -- Dirichlet handling -------------------------------------------------------


def _dirichlet_scalar(mesh, spec: Mapping[str, object]):
    idx_parts, val_parts = [], []
    for tag, value in spec.items():
        nodes = _tag_nodes_checked(mesh, tag)
        coords = mesh.nodes[nodes]
        vals = value(coords) if callable(value) else np.full(len(nodes), float(value))
        idx_parts.append(nodes)
        val_parts.append(np.asarray(vals, dtype=float))
    return _merge_fixed(idx_parts, val_parts)


def _dirichlet_vector(mesh, spec: Mapping[str, object]):
    d = mesh.dim
    idx_parts, val_parts = [], []
    for tag, value in spec.items():
        nodes = _tag_nodes_checked(mesh, tag)
        coords = mesh.nodes[nodes]
        if callable(value):
            vals = np.asarray(value(coords), dtype=float)
        else:
            vals = np.broadcast_to(np.asarray(value, dtype=float), (len(nodes), d))
        if vals.shape != (len(nodes), d):
            raise ConfigurationError(f"Dirichlet values on '{tag}' must be ({len(nodes)}, {d})")
        dofs = (nodes[:, None] * d + np.arange(d)[None, :]).ravel()
        idx_parts.append(dofs)
        val_parts.append(vals.ravel())
    return _merge_fixed(idx_parts, val_parts)


def _tag_nodes_checked(mesh, tag):
    try:
        nodes = mesh.tag_nodes(tag)
    except KeyError as exc:
        raise ConfigurationError(str(exc)) from exc
    if len(nodes) == 0:
        raise ConfigurationError(f"Dirichlet tag '{tag}' matches no boundary facets")
    return nodes


def _merge_fixed(idx_parts, val_parts):
    if not idx_parts:
        return np.empty(0, dtype=np.int64), np.empty(0)
    idx = np.concatenate(idx_parts)
    val = np.concatenate(val_parts)
    # Last assignment wins for dofs shared by multiple tags.
    order = np.arange(len(idx))
    uniq, first = np.unique(idx[::-1], return_index=True)
    return uniq, val[::-1][first]


def eliminate_dirichlet(mat: sp.csr_matrix, load: np.ndarray, fixed_idx, fixed_val,
               n_dofs: int) -> SparseSystem:
    values = np.zeros(n_dofs)
    values[fixed_idx] = fixed_val
    mask = np.ones(n_dofs, dtype=bool)
    mask[fixed_idx] = False
    free = np.flatnonzero(mask)
    rhs = load[free]
    if len(fixed_idx) and np.any(fixed_val != 0.0):
        rhs = rhs - mat[free][:, fixed_idx] @ fixed_val
    reduced = mat[free][:, free].tocsr()
    return SparseSystem(matrix=reduced, rhs=rhs, free=free, values=values, n_dofs=n_dofs)


# -- solver -------------------------------------------------------------------


def solve(system: SparseSystem, tol: float = 1e-8, maxiter: int | None = None,
          x0: np.ndarray | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients on the reduced system.

    Returns the full dof vector with Dirichlet values filled in.  Raises
    :class:`SolverError` carrying the reached relative residual when the
    iteration budget (default ``10 * n``) is exhausted.
    """
    mat, rhs = system.matrix, system.rhs
    n = len(rhs)
    if n == 0:
        return system.values.copy()
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return system.scatter(np.zeros(n))
    diag = mat.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("system matrix has nonpositive diagonal entries")
    inv_diag = 1.0 / diag
    precond = LinearOperator((n, n), matvec=lambda v: inv_diag * v)
    if maxiter is None:
        maxiter = 10 * n
    start = None if x0 is None else np.asarray(x0, dtype=float)[system.free]
    x, info = cg(mat, rhs, x0=start, rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
    residual = float(np.linalg.norm(rhs - mat @ x) / bnorm)
    if info != 0 or not np.isfinite(residual) or residual > tol * (1 + 1e-12):
        raise SolverError(
            f"conjugate gradient failed to reach tol={tol:g} "
            f"within {maxiter} iterations (residual {residual:.3e})",
            residual=residual,
        )
    return system.scatter(x)


def element_means(mesh: SimplexMesh, nodal: np.ndarray) -> np.ndarray:
    """Mean of nodal values over each element's nodes."""
    return np.asarray(nodal, dtype=float)[mesh.elements].mean(axis=1)


def element_gradients(mesh: SimplexMesh, nodal: np.ndarray) -> np.ndarray:
    """Constant P1 gradient of a nodal scalar field per element."""
    vals = np.asarray(nodal, dtype=float)[mesh.elements]  # (E, d+1)
    return np.einsum("eid,ei->ed", mesh.shape_gradients, vals)

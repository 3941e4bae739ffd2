"""Structured simplex meshes over box-shaped design domains.

The whole toolkit operates on a fixed design domain: a box discretized
once into triangles (2D) or tetrahedra (3D) that never changes during
optimization.  Boundary facets carry named tags used to attach boundary
conditions (fixed displacement, traction, prescribed temperature,
powder-escape Dirichlet, and the material-connected part of the domain
boundary).

Conventions
-----------
* 2D cells are split into two triangles along an alternating diagonal;
  3D cells are split into six tetrahedra sharing the cell's main
  diagonal (Kuhn split).  Both patterns are conforming and deterministic.
* Elements are re-oriented so their signed volume is positive.
* Each boundary facet carries exactly one tag: the first matching tag
  rule wins, untagged facets fall back to ``"default"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from topopt.errors import InvalidSpecError

# Predicate on facet centroids: maps an (n, dim) coordinate array to an
# (n,) boolean mask.
TagRule = tuple[str, Callable[[np.ndarray], np.ndarray]]

DEFAULT_TAG = "default"

# Kuhn split: six tetrahedra around the main diagonal of a cell, corners
# labeled by binary offsets (bit 0 = x, bit 1 = y, bit 2 = z).
_KUHN_TETS = (
    (0, 1, 3, 7),
    (0, 1, 5, 7),
    (0, 2, 3, 7),
    (0, 2, 6, 7),
    (0, 4, 5, 7),
    (0, 4, 6, 7),
)


@dataclass(frozen=True)
class BoxSpec:
    """Specification of a structured box mesh.

    ``tag_rules`` are evaluated on boundary-facet centroids in order;
    the first rule whose predicate matches names the facet's tag.
    """

    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    subdivisions: tuple[int, ...]
    tag_rules: Sequence[TagRule] = field(default_factory=tuple)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InvalidSpecError(f"dim must be 2 or 3, got {self.dim}")
        if not (len(self.lower) == len(self.upper) == len(self.subdivisions) == self.dim):
            raise InvalidSpecError("lower, upper and subdivisions must match dim")
        if any(n < 1 for n in self.subdivisions):
            raise InvalidSpecError(
                f"subdivisions must be >= 1 per axis, got {self.subdivisions}"
            )
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise InvalidSpecError("upper corner must exceed lower corner componentwise")

    @property
    def diagonal(self) -> float:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        return float(np.linalg.norm(hi - lo))

    @property
    def volume(self) -> float:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        return float(np.prod(hi - lo))


class SimplexMesh:
    """Immutable triangulated / tetrahedralized box domain.

    Attributes
    ----------
    dim : int
        Spatial dimension (2 or 3).
    nodes : (n_nodes, dim) float array
        Node coordinates.
    elements : (n_elements, dim + 1) int array
        Simplex connectivity, positively oriented.
    boundary_facets : (n_bfacets, dim) int array
        Node tuples of facets on the topological boundary.
    boundary_owner : (n_bfacets,) int array
        Index of the unique element owning each boundary facet.
    tags : dict[str, np.ndarray]
        Tag name -> indices into ``boundary_facets``.  Tags partition
        the boundary; facets matching no rule carry ``"default"``.
    """

    def __init__(
        self,
        dim: int,
        nodes: np.ndarray,
        elements: np.ndarray,
        tag_rules: Sequence[TagRule] = (),
        geom_tol: float | None = None,
    ):
        self.dim = int(dim)
        self.nodes = np.array(nodes, dtype=float, order="C")
        self.elements = np.array(elements, dtype=np.int64, order="C")
        if self.nodes.shape[1] != self.dim:
            raise InvalidSpecError("node coordinate dimension mismatch")
        if self.elements.shape[1] != self.dim + 1:
            raise InvalidSpecError("element connectivity must have dim + 1 nodes")
        if self.elements.min(initial=0) < 0 or self.elements.max(initial=-1) >= len(self.nodes):
            raise InvalidSpecError("element references an invalid node index")

        self._orient_elements()
        self._compute_geometry()
        self._extract_facets()
        self._tag_boundary(tag_rules, geom_tol)
        self._adjacency_cache: tuple[np.ndarray, np.ndarray] | None = None
        self.nodes.setflags(write=False)
        self.elements.setflags(write=False)

    # -- construction --------------------------------------------------------

    def _orient_elements(self) -> None:
        """Swap the last two nodes of negatively oriented simplices."""
        vol = _signed_volumes(self.nodes, self.elements)
        flipped = vol < 0
        if np.any(flipped):
            cols = self.elements[flipped][:, [0, 1, 3, 2]] if self.dim == 3 else \
                self.elements[flipped][:, [0, 2, 1]]
            self.elements[flipped] = cols
            vol = np.abs(vol)
        if np.any(vol <= 0.0):
            raise InvalidSpecError("mesh contains degenerate elements")
        self.element_volumes = vol

    def _compute_geometry(self) -> None:
        d = self.dim
        coords = self.nodes[self.elements]  # (E, d+1, d)
        # Jacobian rows: edge vectors from node 0; grad of barycentric
        # coordinate i (i >= 1) is row i-1 of J^{-T}.
        jac = coords[:, 1:, :] - coords[:, :1, :]  # (E, d, d)
        grads = np.empty((len(self.elements), d + 1, d))
        grads[:, 1:, :] = np.linalg.inv(jac).transpose(0, 2, 1)
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        self.shape_gradients = grads
        self.element_centroids = coords.mean(axis=1)

        lumped = np.zeros(len(self.nodes))
        np.add.at(lumped, self.elements, (self.element_volumes / (d + 1))[:, None])
        self.lumped_mass = lumped
        self.domain_measure = float(self.element_volumes.sum())

    def _extract_facets(self) -> None:
        d = self.dim
        n_el = len(self.elements)
        # Facet i of an element drops local node i.
        local = [tuple(j for j in range(d + 1) if j != i) for i in range(d + 1)]
        facets = np.concatenate([self.elements[:, idx] for idx in local], axis=0)
        owners = np.tile(np.arange(n_el), d + 1)
        facets_sorted = np.sort(facets, axis=1)
        order = np.lexsort(facets_sorted.T[::-1])
        fs = facets_sorted[order]
        ow = owners[order]
        new_group = np.empty(len(fs), dtype=bool)
        new_group[0] = True
        new_group[1:] = np.any(fs[1:] != fs[:-1], axis=1)
        group_id = np.cumsum(new_group) - 1
        counts = np.bincount(group_id)
        if counts.max(initial=1) > 2:
            raise InvalidSpecError("non-manifold facet: shared by more than two elements")
        first = np.flatnonzero(new_group)
        boundary_groups = np.flatnonzero(counts == 1)
        self.boundary_facets = fs[first[boundary_groups]]
        self.boundary_owner = ow[first[boundary_groups]]
        # Interior facets pair up consecutive rows within a group.
        interior_groups = np.flatnonzero(counts == 2)
        a = ow[first[interior_groups]]
        b = ow[first[interior_groups] + 1]
        self._interior_pairs = np.column_stack([a, b])
        self.n_unique_facets = len(counts)

        fc = self.nodes[self.boundary_facets]
        self.boundary_centroids = fc.mean(axis=1)
        if d == 2:
            self.facet_measures = np.linalg.norm(fc[:, 1] - fc[:, 0], axis=1)
        else:
            cross = np.cross(fc[:, 1] - fc[:, 0], fc[:, 2] - fc[:, 0])
            self.facet_measures = 0.5 * np.linalg.norm(cross, axis=1)

    def _tag_boundary(self, tag_rules: Sequence[TagRule], geom_tol: float | None) -> None:
        assigned = np.full(len(self.boundary_facets), -1, dtype=np.int64)
        names: list[str] = []
        for name, predicate in tag_rules:
            mask = np.asarray(predicate(self.boundary_centroids), dtype=bool)
            if mask.shape != (len(self.boundary_facets),):
                raise InvalidSpecError(f"tag rule '{name}' returned a wrong-shaped mask")
            rule_id = names.index(name) if name in names else len(names)
            if rule_id == len(names):
                names.append(name)
            assigned[mask & (assigned < 0)] = rule_id
        self.tags: dict[str, np.ndarray] = {
            name: np.flatnonzero(assigned == rule_id) for rule_id, name in enumerate(names)
        }
        if DEFAULT_TAG not in self.tags:
            self.tags[DEFAULT_TAG] = np.flatnonzero(assigned < 0)
        self.geom_tol = geom_tol

    # -- queries -------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def tag_facets(self, tag: str) -> np.ndarray:
        """Facet indices of a tag; raises ``KeyError`` for unknown tags."""
        if tag not in self.tags:
            raise KeyError(f"unknown boundary tag '{tag}' (have {sorted(self.tags)})")
        return self.tags[tag]

    def tag_nodes(self, tag: str) -> np.ndarray:
        """Sorted unique node indices lying on a tag's facets."""
        return np.unique(self.boundary_facets[self.tag_facets(tag)])

    def element_adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """Face-neighbor structure as CSR-style (indptr, indices)."""
        if self._adjacency_cache is None:
            pairs = self._interior_pairs
            both = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            indptr = np.zeros(self.n_elements + 1, dtype=np.int64)
            np.add.at(indptr, both[:, 0] + 1, 1)
            indptr = np.cumsum(indptr)
            self._adjacency_cache = (indptr, both[:, 1].copy())
        return self._adjacency_cache

    def element_to_nodal(self, values: np.ndarray) -> np.ndarray:
        """Volume-weighted average of element values onto nodes."""
        values = np.asarray(values, dtype=float)
        num = np.zeros(self.n_nodes)
        w = self.element_volumes / (self.dim + 1)
        np.add.at(num, self.elements, (values * w)[:, None])
        return num / self.lumped_mass

    def integrate_nodal(self, values: np.ndarray) -> float:
        """Integral over the domain of the P1 interpolant of nodal values."""
        return float(self.lumped_mass @ np.asarray(values, dtype=float))

    def write_vtk(self, path, point_data=None, cell_data=None, title="topopt mesh") -> None:
        from topopt import vtk_io

        vtk_io.write_vtk(path, self, point_data=point_data, cell_data=cell_data, title=title)


def generate_box_mesh(spec: BoxSpec) -> SimplexMesh:
    """Build the structured simplex mesh described by ``spec``."""
    if spec.dim == 2:
        nodes, elements = _grid_2d(spec)
    else:
        nodes, elements = _grid_3d(spec)
    tol = 1e-9 * spec.diagonal
    return SimplexMesh(spec.dim, nodes, elements, spec.tag_rules, geom_tol=tol)


def facet_tag_measure(mesh: SimplexMesh, tag: str) -> float:
    """Total length (2D) or area (3D) of the facets carrying ``tag``."""
    return float(mesh.facet_measures[mesh.tag_facets(tag)].sum())


def _grid_2d(spec: BoxSpec) -> tuple[np.ndarray, np.ndarray]:
    nx, ny = spec.subdivisions
    xs = np.linspace(spec.lower[0], spec.upper[0], nx + 1)
    ys = np.linspace(spec.lower[1], spec.upper[1], ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ix, iy = ix.ravel(), iy.ravel()
    n00 = iy * (nx + 1) + ix
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1
    even = (ix + iy) % 2 == 0
    tri1 = np.where(even[:, None], np.column_stack([n00, n10, n11]),
                    np.column_stack([n00, n10, n01]))
    tri2 = np.where(even[:, None], np.column_stack([n00, n11, n01]),
                    np.column_stack([n10, n11, n01]))
    elements = np.concatenate([tri1[:, None, :], tri2[:, None, :]], axis=1)
    return nodes, elements.reshape(-1, 3)


def _grid_3d(spec: BoxSpec) -> tuple[np.ndarray, np.ndarray]:
    nx, ny, nz = spec.subdivisions
    xs = np.linspace(spec.lower[0], spec.upper[0], nx + 1)
    ys = np.linspace(spec.lower[1], spec.upper[1], ny + 1)
    zs = np.linspace(spec.lower[2], spec.upper[2], nz + 1)
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ix, iy, iz = ix.ravel(), iy.ravel(), iz.ravel()

    def node_id(dx, dy, dz):
        return ((iz + dz) * (ny + 1) + (iy + dy)) * (nx + 1) + (ix + dx)

    corners = np.stack(
        [node_id(b & 1, (b >> 1) & 1, (b >> 2) & 1) for b in range(8)], axis=1
    )  # (cells, 8)
    tets = np.stack([corners[:, list(t)] for t in _KUHN_TETS], axis=1)
    return nodes, tets.reshape(-1, 4)


def _signed_volumes(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    coords = nodes[elements]
    jac = coords[:, 1:, :] - coords[:, :1, :]
    d = nodes.shape[1]
    factor = 2.0 if d == 2 else 6.0
    return np.linalg.det(jac) / factor

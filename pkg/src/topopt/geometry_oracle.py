"""Ground-truth cavity detection by flood fill over void elements.

Independent of the PDE-based detector: void elements (material fraction
below a threshold) are grouped into face-connected components, and a
component counts as escapable only if it contains an element owning a
boundary facet on the powder-escape tag.  Face adjacency (not vertex
adjacency) is deliberate: two voids meeting only at a vertex do not
admit powder flow.

Used by tests as the oracle for the cavity-constraint field and by the
CLI as a post-hoc verifier of final designs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from topopt.errors import ConfigurationError
from topopt.mesh import SimplexMesh

MATERIAL_LABEL = -1


@dataclass
class VoidComponents:
    """Flood-fill labeling of the void region.

    ``labels`` holds a component id per element (-1 for material).
    Component ids follow discovery order: the component containing the
    lowest-numbered void element is 0, and so on.
    """

    labels: np.ndarray
    touching: frozenset[int]
    enclosed: frozenset[int]
    volumes: np.ndarray
    enclosed_volume: float = field(init=False)

    def __post_init__(self):
        self.enclosed_volume = float(sum(self.volumes[c] for c in self.enclosed))

    @property
    def n_components(self) -> int:
        return len(self.volumes)

    def enclosed_mask(self) -> np.ndarray:
        """Boolean per-element mask of elements in enclosed components."""
        mask = np.zeros(len(self.labels), dtype=bool)
        for comp in self.enclosed:
            mask |= self.labels == comp
        return mask

    def summary(self) -> dict:
        return {
            "components": self.n_components,
            "enclosed_components": len(self.enclosed),
            "touching_components": len(self.touching),
            "enclosed_volume": self.enclosed_volume,
            "component_volumes": [float(v) for v in self.volumes],
            "enclosed_ids": sorted(self.enclosed),
        }


def label_voids(mesh: SimplexMesh, chi: np.ndarray, threshold: float = 0.5,
                escape_tag: str = "gamma_p") -> VoidComponents:
    """Label face-connected void components and split them by escapability.

    Elements with material fraction strictly below ``threshold`` count as
    void.  Raises :class:`ConfigurationError` when the escape tag is
    missing or matches no boundary facets.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("void threshold must lie in (0, 1)")
    try:
        escape_facets = mesh.tag_facets(escape_tag)
    except KeyError as exc:
        raise ConfigurationError(str(exc)) from exc
    if len(escape_facets) == 0:
        raise ConfigurationError(f"escape tag '{escape_tag}' matches no boundary facets")

    chi = np.asarray(chi, dtype=float)
    void = chi < threshold
    labels = np.full(mesh.n_elements, MATERIAL_LABEL, dtype=np.int64)
    if not void.any():
        return VoidComponents(labels, frozenset(), frozenset(), np.empty(0))

    indptr, indices = mesh.element_adjacency()
    adj = sp.csr_matrix(
        (np.ones(len(indices), dtype=np.int8), indices, indptr),
        shape=(mesh.n_elements, mesh.n_elements),
    )
    mask_diag = sp.diags(void.astype(np.int8))
    void_adj = mask_diag @ adj @ mask_diag
    n_raw, raw = connected_components(void_adj, directed=False)
    # Re-label in discovery order over void elements and drop the
    # singleton classes csgraph assigns to material elements.
    raw_void = raw[void]
    _, first_pos = np.unique(raw_void, return_index=True)
    order = np.argsort(first_pos)
    remap = np.empty(n_raw, dtype=np.int64)
    remap[raw_void[np.sort(first_pos)]] = np.arange(len(first_pos))
    labels[void] = remap[raw_void]

    n_comp = len(first_pos)
    volumes = np.bincount(labels[void], weights=mesh.element_volumes[void],
                          minlength=n_comp)
    owners = mesh.boundary_owner[escape_facets]
    touching = frozenset(int(c) for c in np.unique(labels[owners]) if c != MATERIAL_LABEL)
    enclosed = frozenset(range(n_comp)) - touching
    return VoidComponents(labels, touching, enclosed, volumes)

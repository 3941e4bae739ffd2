"""Primitive-shape painting of material layouts onto element centroids.

Validation scenarios and the oracle checker operate on fixed geometries
described as an ordered list of boxes and discs (balls in 3D), each
either material or void, painted over a background phase.  Later shapes
overwrite earlier ones, so an annulus is simply a material disc followed
by a smaller void disc.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from topopt.errors import InvalidSpecError
from topopt.mesh import SimplexMesh


@dataclass(frozen=True)
class PrimitiveShape:
    """One paint operation: ``kind`` is ``"box"`` or ``"disc"``.

    Box parameters: lower corner then upper corner (2*dim numbers).
    Disc parameters: center then radius (dim + 1 numbers).
    """

    kind: str
    material: bool
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("box", "disc"):
            raise InvalidSpecError(f"unknown shape kind '{self.kind}'")

    def contains(self, points: np.ndarray) -> np.ndarray:
        dim = points.shape[1]
        par = np.asarray(self.params, dtype=float)
        if self.kind == "box":
            if len(par) != 2 * dim:
                raise InvalidSpecError(
                    f"box needs {2 * dim} parameters in {dim}D, got {len(par)}"
                )
            lo, hi = par[:dim], par[dim:]
            return np.all((points >= lo) & (points <= hi), axis=1)
        if len(par) != dim + 1:
            raise InvalidSpecError(
                f"disc needs {dim + 1} parameters in {dim}D, got {len(par)}"
            )
        center, radius = par[:dim], par[dim]
        return np.linalg.norm(points - center, axis=1) <= radius


def paint_geometry(mesh: SimplexMesh, shapes: list[PrimitiveShape],
                   background_material: bool = False) -> np.ndarray:
    """Per-element material fraction (0 or 1) from an ordered shape list."""
    chi = np.full(mesh.n_elements, 1.0 if background_material else 0.0)
    for shape in shapes:
        inside = shape.contains(mesh.element_centroids)
        chi[inside] = 1.0 if shape.material else 0.0
    return chi

"""Mesh and point-location types."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import NDArray


@dataclass(frozen=True)
class PointLocation:
    """A point resolved to its containing triangle."""

    triangle_index: int
    barycentric: NDArray[np.float64]
    point: NDArray[np.float64] = field(repr=False)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation of the unit square with an explicit boundary loop.

    Attributes:
        vertices: Vertex coordinates, shape (node_count, 2).
        triangles: Counterclockwise vertex-index triples, shape (triangle_count, 3).
        boundary_nodes: Boundary vertex indices in counterclockwise loop order starting at (0, 0).
        boundary_edges: Rows (node_i, node_j, length) following the loop; the last edge closes it.
        interior_nodes: Remaining vertex indices, increasing.
        n_per_side: Cells per side of the structured grid.
    """

    vertices: NDArray[np.float64]
    triangles: NDArray[np.int64]
    boundary_nodes: NDArray[np.int64]
    boundary_edges: NDArray[np.float64]
    interior_nodes: NDArray[np.int64]
    n_per_side: int

    @property
    def node_count(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def triangle_count(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def boundary_count(self) -> int:
        return int(self.boundary_nodes.shape[0])

    @cached_property
    def signed_areas(self) -> NDArray[np.float64]:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def areas(self) -> NDArray[np.float64]:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> NDArray[np.float64]:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> NDArray[np.float64]:
        """Constant gradients of the three P1 basis functions per triangle, shape (triangle_count, 3, 2)."""
        p = self.vertices[self.triangles]
        x, y = p[:, :, 0], p[:, :, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        twice_area = (2.0 * self.signed_areas)[:, None]
        return np.stack([b / twice_area, c / twice_area], axis=2)

    @cached_property
    def unit_stiffness(self) -> NDArray[np.float64]:
        """Element stiffness matrices for a unit coefficient, shape (triangle_count, 3, 3)."""
        grads = self.basis_gradients
        return self.areas[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)

    @cached_property
    def boundary_mass(self) -> NDArray[np.float64]:
        """Lumped boundary mass per boundary node: half the lengths of the two adjacent boundary edges."""
        lengths = self.boundary_edges[:, 2]
        return 0.5 * (lengths + np.roll(lengths, 1))

    @cached_property
    def nodal_mass(self) -> NDArray[np.float64]:
        """Lumped area mass per vertex: a third of the area of every adjacent triangle."""
        weights = np.repeat(self.areas / 3.0, 3)
        return np.bincount(self.triangles.ravel(), weights=weights, minlength=self.node_count)

    @cached_property
    def boundary_position(self) -> NDArray[np.int64]:
        """Map vertex index -> position in the boundary loop, -1 for interior vertices."""
        position = np.full(self.node_count, -1, dtype=np.int64)
        position[self.boundary_nodes] = np.arange(self.boundary_count)
        return position

    @cached_property
    def loop_parameter(self) -> NDArray[np.float64]:
        """Arclength of each boundary node along the loop, starting at 0 in the corner (0, 0)."""
        lengths = self.boundary_edges[:, 2]
        return np.concatenate([[0.0], np.cumsum(lengths)[:-1]])

    @property
    def perimeter(self) -> float:
        return float(self.boundary_edges[:, 2].sum())

    def describe(self) -> dict:
        return {
            "n_per_side": self.n_per_side,
            "node_count": self.node_count,
            "triangle_count": self.triangle_count,
            "boundary_count": self.boundary_count,
        }

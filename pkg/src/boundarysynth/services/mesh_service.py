from pathlib import Path
from typing import Sequence

import numpy as np
from aws_lambda_powertools import Logger
from models.mesh import Mesh, PointLocation
from utils.errors import MeshError
from utils.helpers import format_number

logger = Logger()

LOCATE_TOLERANCE = 1e-13


def build_structured(n_per_side: int) -> Mesh:
    """Structured triangulation of [0,1]^2 with every cell split along its (0,0)-(1,1) diagonal."""
    if n_per_side < 2:
        raise MeshError(f"n_per_side must be at least 2, got {n_per_side}")

    n = n_per_side
    h = 1.0 / n
    ticks = np.arange(n + 1) * h
    xs, ys = np.meshgrid(ticks, ticks, indexing="xy")
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    def node(i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return i + (n + 1) * j

    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    n00, n10, n01, n11 = node(ci, cj), node(ci + 1, cj), node(ci, cj + 1), node(ci + 1, cj + 1)
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    steps = np.arange(n)
    bottom = node(steps, np.zeros_like(steps))
    right = node(np.full_like(steps, n), steps)
    top = node(n - steps, np.full_like(steps, n))
    left = node(np.zeros_like(steps), n - steps)
    boundary_nodes = np.concatenate([bottom, right, top, left]).astype(np.int64)

    following = np.roll(boundary_nodes, -1)
    lengths = np.linalg.norm(vertices[following] - vertices[boundary_nodes], axis=1)
    boundary_edges = np.column_stack([boundary_nodes, following, lengths])

    is_boundary = np.zeros(len(vertices), dtype=bool)
    is_boundary[boundary_nodes] = True
    interior_nodes = np.flatnonzero(~is_boundary).astype(np.int64)

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_nodes=boundary_nodes,
        boundary_edges=boundary_edges,
        interior_nodes=interior_nodes,
        n_per_side=n,
    )
    logger.debug("Built structured mesh", extra=mesh.describe())
    return mesh


def is_strictly_interior(point: Sequence[float]) -> bool:
    x, y = float(point[0]), float(point[1])
    return 0.0 < x < 1.0 and 0.0 < y < 1.0


def locate(mesh: Mesh, point: Sequence[float]) -> PointLocation:
    """Find the lowest-index triangle containing an interior point."""
    p = np.asarray(point, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise MeshError(f"Point must be a finite 2D coordinate, got {point!r}")
    if not is_strictly_interior(p):
        raise MeshError(f"Point {tuple(p.tolist())} is not strictly inside the unit square")

    corners = mesh.vertices[mesh.triangles]
    grads = mesh.basis_gradients
    # lambda_i(p) = lambda_i(v0) + grad lambda_i . (p - v0)
    offset = p - corners[:, 0, :]
    bary = np.einsum("tik,tk->ti", grads, offset)
    bary[:, 0] += 1.0
    inside = np.flatnonzero(bary.min(axis=1) >= -LOCATE_TOLERANCE)
    if inside.size == 0:
        raise MeshError(f"Point {tuple(p.tolist())} is not covered by the mesh")

    index = int(inside[0])
    weights = np.clip(bary[index], 0.0, 1.0)
    weights /= weights.sum()
    return PointLocation(triangle_index=index, barycentric=weights, point=p)


def dump_mesh(mesh: Mesh, path: Path) -> None:
    """Write the vertex table then the triangle table.

    Columns: ``vertex index x y boundary_position`` for vertices, ``triangle index v0 v1 v2`` for triangles.
    """
    lines = [f"# vertices {mesh.node_count}: index x y boundary_position"]
    position = mesh.boundary_position
    for k, (x, y) in enumerate(mesh.vertices):
        lines.append(f"vertex {k} {format_number(x)} {format_number(y)} {position[k]}")
    lines.append(f"# triangles {mesh.triangle_count}: index v0 v1 v2")
    for k, (a, b, c) in enumerate(mesh.triangles):
        lines.append(f"triangle {k} {a} {b} {c}")
    path.write_text("\n".join(lines) + "\n")

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial import procrustes

from geometry.errors import LayoutError, NonConvergedMetricError
from geometry.measures import angles_from_lengths
from geometry.ricci import DEFAULT_EPSILON, CirclePackingMetric, edge_lengths, metric_curvature
from ingestion.mesh import TriMesh
from ingestion.readers import write_obj

logger = logging.getLogger(__name__)

# relative slack when two placement circles just miss each other
INTERSECTION_TOL = 1e-6
EDGE_RESIDUAL_TOL = 1e-4


class Projection(str, Enum):
    CONFORMAL = "conformal"
    ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True, eq=False)
class PlanarEmbedding:
    uv: np.ndarray
    source: Projection
    seed_face: Optional[int] = None
    max_edge_residual: Optional[float] = None

    def __post_init__(self) -> None:
        uv = np.array(self.uv, dtype=np.float64)
        if uv.ndim != 2 or uv.shape[1] != 2:
            raise ValueError("uv must be an (n, 2) array")
        if not np.all(np.isfinite(uv)):
            raise ValueError("uv coordinates must be finite")
        uv.setflags(write=False)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "source", Projection(self.source))

    def __len__(self) -> int:
        return len(self.uv)

    def signed_areas(self, mesh: TriMesh) -> np.ndarray:
        if len(self.uv) != mesh.n_vertices:
            raise ValueError(f"embedding has {len(self.uv)} vertices, mesh has {mesh.n_vertices}")
        p = self.uv[mesh.faces]
        a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def flip_count(self, mesh: TriMesh) -> int:
        """Faces with non-positive signed area (flipped or collapsed)."""
        return int(np.count_nonzero(self.signed_areas(mesh) <= 0))

    def scaled(self, factor: float) -> "PlanarEmbedding":
        return PlanarEmbedding(self.uv * factor, self.source, self.seed_face, self.max_edge_residual)


# -----------------------------
# Conformal layout
# -----------------------------
def seed_face(mesh: TriMesh) -> int:
    """Face whose centroid is nearest the vertex centroid; lowest index on ties."""
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    dist = np.linalg.norm(centroids - mesh.vertices.mean(axis=0), axis=1)
    return int(np.argmin(dist))


def layout(
    mesh: TriMesh,
    metric: CirclePackingMetric,
    epsilon: Optional[float] = DEFAULT_EPSILON,
) -> PlanarEmbedding:
    """
    Lays a flat metric out in the plane. The seed face goes to (0,0), (l_ij,0),
    l_ki*(cos t_i, sin t_i); every other vertex is the intersection of two circles
    around an already placed edge, taken on the side that keeps the face
    counter-clockwise. Faces are visited breadth first, neighbours in corner order.

    ``epsilon=None`` skips the flatness check on the metric.
    """
    if epsilon is not None:
        k = metric_curvature(mesh, metric)
        residual = float(np.abs(k[mesh.interior]).max(initial=0.0))
        if residual >= epsilon:
            raise NonConvergedMetricError(
                f"interior curvature {residual:.3e} is not below {epsilon:.1e}; run the flow first"
            )

    lengths = edge_lengths(metric)
    corner = lengths[mesh.face_edges]
    faces = mesh.faces
    adjacency = mesh.face_adjacency

    uv = np.zeros((mesh.n_vertices, 2))
    placed = np.zeros(mesh.n_vertices, dtype=bool)
    visited = np.zeros(mesh.n_faces, dtype=bool)

    seed = seed_face(mesh)
    i, j, k = faces[seed]
    theta_i = angles_from_lengths(corner[seed : seed + 1])[0, 0]
    l_ij, l_ki = corner[seed, 2], corner[seed, 1]
    uv[j] = (l_ij, 0.0)
    uv[k] = (l_ki * np.cos(theta_i), l_ki * np.sin(theta_i))
    placed[[i, j, k]] = True
    visited[seed] = True

    queue = deque([seed])
    while queue:
        f = queue.popleft()
        for g in adjacency[f]:
            if g < 0 or visited[g]:
                continue
            visited[g] = True
            _place_face(int(g), faces, corner, uv, placed)
            queue.append(int(g))

    if not placed.all():
        v = int(np.flatnonzero(~placed)[0])
        raise LayoutError(f"vertex {v} was never reached from the seed face")

    emb_lengths = np.linalg.norm(uv[mesh.edges[:, 0]] - uv[mesh.edges[:, 1]], axis=1)
    residual = float(np.max(np.abs(emb_lengths - lengths) / lengths))
    embedding = PlanarEmbedding(uv, Projection.CONFORMAL, seed_face=seed, max_edge_residual=residual)

    areas = embedding.signed_areas(mesh)
    flipped = np.flatnonzero(areas <= 0)
    if flipped.size:
        f = int(flipped[0])
        raise LayoutError(f"{flipped.size} faces are flipped in the layout, first is face {f}", face=f)
    if residual > EDGE_RESIDUAL_TOL:
        logger.warning("Layout edge-length residual %.2e exceeds %.0e", residual, EDGE_RESIDUAL_TOL)
    logger.debug("Layout from seed face %d, max relative edge residual %.2e", seed, residual)
    return embedding


def _place_face(g: int, faces: np.ndarray, corner: np.ndarray, uv: np.ndarray, placed: np.ndarray) -> None:
    unplaced = [c for c in range(3) if not placed[faces[g, c]]]
    if not unplaced:
        return
    if len(unplaced) > 1:
        raise LayoutError(f"face {g} reached with fewer than two placed vertices", face=g)
    c = unplaced[0]
    # rotate the face to (p, q, l) with l the new vertex; CCW order is kept
    cp, cq = (c + 1) % 3, (c + 2) % 3
    p, q, l = faces[g, cp], faces[g, cq], faces[g, c]
    r1 = corner[g, cq]  # |pl| lies opposite q
    r2 = corner[g, cp]  # |ql| lies opposite p
    uv[l] = _circle_intersection(uv[p], uv[q], r1, r2, g)
    placed[l] = True


def _circle_intersection(p: np.ndarray, q: np.ndarray, r1: float, r2: float, face: int) -> np.ndarray:
    """Intersection of circles around p and q lying left of p->q."""
    e = q - p
    d = float(np.hypot(e[0], e[1]))
    if d == 0.0:
        raise LayoutError(f"face {face} has coincident placed vertices", face=face)
    e = e / d
    a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    h2 = r1 * r1 - a * a
    if h2 < 0.0:
        gap = max(d - (r1 + r2), abs(r1 - r2) - d)
        if gap > INTERSECTION_TOL * (r1 + r2):
            raise LayoutError(
                f"placement circles for face {face} miss by {gap:.3e} (radii {r1:.6g}, {r2:.6g}, distance {d:.6g})",
                face=face,
            )
        h2 = 0.0
    perp = np.array([-e[1], e[0]])
    return p + a * e + np.sqrt(h2) * perp


# -----------------------------
# Orthographic baseline
# -----------------------------
def orthographic(mesh: TriMesh) -> PlanarEmbedding:
    """Drops z. Flips are allowed here; self-occluding poses produce them."""
    return PlanarEmbedding(mesh.vertices[:, :2].copy(), Projection.ORTHOGRAPHIC)


# -----------------------------
# Helpers
# -----------------------------
def procrustes_disparity(a: PlanarEmbedding, b: PlanarEmbedding) -> float:
    """Residual after the best planar similarity (scipy's normalised sum of squares)."""
    if len(a) != len(b):
        raise ValueError("embeddings differ in vertex count")
    _, _, disparity = procrustes(a.uv, b.uv)
    return float(disparity)


def save_embedding_obj(path: Union[str, Path], mesh: TriMesh, embedding: PlanarEmbedding) -> Path:
    """Writes the flattened mesh with uv as positions (z = 0) and the mesh colors."""
    vertices = np.column_stack([embedding.uv, np.zeros(len(embedding))])
    return write_obj(path, vertices, mesh.faces, mesh.colors)

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Union

import numpy as np
import pandas as pd

from app_helpers.utils import atomic_write_bytes
from geometry.errors import DegenerateFaceError, ZeroNormalError
from ingestion.mesh import TriMesh

if TYPE_CHECKING:
    from geometry.layout import PlanarEmbedding

logger = logging.getLogger(__name__)

# deficit * prefactor / ring area; 3.0 gives the barycentric (one third of the ring) normalisation
WEIGHTED_CURVATURE_PREFACTOR = 1.5


class Quantity(str, Enum):
    GAUSS_CURVATURE_DEFICIT = "gauss_curvature_deficit"
    GAUSS_CURVATURE_WEIGHTED = "gauss_curvature_weighted"
    CONFORMAL_FACTOR = "conformal_factor"
    DEPTH = "depth"
    NORMAL = "normal"


@dataclass(frozen=True, eq=False)
class VertexScalars:
    values: np.ndarray
    quantity: Quantity

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("vertex scalars must be one value per vertex")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.quantity.value} has non-finite values")
        if self.quantity is Quantity.CONFORMAL_FACTOR and np.any(values <= 0):
            raise ValueError("conformal factors must be strictly positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"vertex_index": np.arange(len(self.values)), "value": self.values})

    def to_csv(self, path: Union[str, Path]) -> Path:
        return atomic_write_bytes(Path(path), self.to_frame().to_csv(index=False).encode("utf-8"))


@dataclass(frozen=True, eq=False)
class VertexVectors:
    values: np.ndarray
    quantity: Quantity = Quantity.NORMAL

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != 3:
            raise ValueError("vertex vectors must be an (n, 3) array")
        if not np.allclose(np.linalg.norm(values, axis=1), 1.0, rtol=0.0, atol=1e-9):
            raise ValueError("vertex vectors must have unit length")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "vertex_index": np.arange(len(self.values)),
                "x": self.values[:, 0],
                "y": self.values[:, 1],
                "z": self.values[:, 2],
            }
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        return atomic_write_bytes(Path(path), self.to_frame().to_csv(index=False).encode("utf-8"))


@dataclass(frozen=True)
class DistortionStats:
    ratios: np.ndarray  # per face sigma1/sigma2, NaN where flipped or degenerate
    mean: float
    max: float
    flipped: int
    degenerate: int

    def summary(self) -> dict:
        return {"mean": self.mean, "max": self.max, "flipped": self.flipped, "degenerate": self.degenerate}


# -----------------------------
# Per-face quantities
# -----------------------------
def face_corner_lengths(mesh: TriMesh) -> np.ndarray:
    """(F, 3) length of the edge opposite each corner."""
    return mesh.edge_lengths()[mesh.face_edges]


def angles_from_lengths(lengths: np.ndarray) -> np.ndarray:
    """
    Corner angles from opposite edge lengths via the half-angle tangent form,
    which stays accurate for needle triangles where arccos loses digits.
    Raises DegenerateFaceError on the first face breaking a triangle inequality.
    """
    a, b, c = lengths[:, 0], lengths[:, 1], lengths[:, 2]
    s = 0.5 * (a + b + c)
    sa, sb, sc = s - a, s - b, s - c
    bad = np.flatnonzero(~((sa > 0) & (sb > 0) & (sc > 0)))
    if bad.size:
        f = int(bad[0])
        raise DegenerateFaceError(f"face {f} violates the triangle inequality or has zero area", face=f)
    return _half_angle(s, sa, sb, sc)


def _half_angle(s, sa, sb, sc) -> np.ndarray:
    return np.column_stack(
        [
            2.0 * np.arctan2(np.sqrt(sb * sc), np.sqrt(s * sa)),
            2.0 * np.arctan2(np.sqrt(sc * sa), np.sqrt(s * sb)),
            2.0 * np.arctan2(np.sqrt(sa * sb), np.sqrt(s * sc)),
        ]
    )


def areas_from_lengths(lengths: np.ndarray) -> np.ndarray:
    a, b, c = lengths[:, 0], lengths[:, 1], lengths[:, 2]
    s = 0.5 * (a + b + c)
    return np.sqrt(np.clip(s * (s - a) * (s - b) * (s - c), 0.0, None))


def corner_angles(mesh: TriMesh) -> np.ndarray:
    """(F, 3) corner angles in radians, rows summing to pi."""
    return angles_from_lengths(face_corner_lengths(mesh))


def face_normals(mesh: TriMesh) -> np.ndarray:
    """Unit face normals following the face winding."""
    cross = _face_cross(mesh)
    norms = np.linalg.norm(cross, axis=1)
    bad = np.flatnonzero(norms <= 0)
    if bad.size:
        raise DegenerateFaceError(f"face {bad[0]} has zero area", face=int(bad[0]))
    return cross / norms[:, None]


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_face_cross(mesh), axis=1)


def _face_cross(mesh: TriMesh) -> np.ndarray:
    p = mesh.vertices[mesh.faces]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def ring_sum(mesh: TriMesh, per_corner: np.ndarray) -> np.ndarray:
    """Sum an (F, 3) per-corner array onto the vertices."""
    return np.bincount(mesh.faces.ravel(), weights=per_corner.ravel(), minlength=mesh.n_vertices)


def _deficit(mesh: TriMesh, angles: np.ndarray) -> np.ndarray:
    total = np.where(mesh.boundary_flags, np.pi, 2.0 * np.pi)
    return total - ring_sum(mesh, angles)


# -----------------------------
# Vertex quantities
# -----------------------------
def angle_deficit_curvature(mesh: TriMesh) -> VertexScalars:
    """2*pi minus the corner angle sum at interior vertices, pi minus it on the boundary."""
    return VertexScalars(_deficit(mesh, corner_angles(mesh)), Quantity.GAUSS_CURVATURE_DEFICIT)


def weighted_curvature(mesh: TriMesh, prefactor: float = WEIGHTED_CURVATURE_PREFACTOR) -> VertexScalars:
    """Angle deficit scaled by prefactor / (one-ring area)."""
    angles = corner_angles(mesh)
    ring_area = ring_sum(mesh, np.repeat(face_areas(mesh)[:, None], 3, axis=1))
    values = prefactor * _deficit(mesh, angles) / ring_area
    return VertexScalars(values, Quantity.GAUSS_CURVATURE_WEIGHTED)


def vertex_normals(mesh: TriMesh) -> VertexVectors:
    """Incident face normals weighted by corner angle times face area."""
    angles = corner_angles(mesh)
    normals = face_normals(mesh)
    weights = angles * face_areas(mesh)[:, None]
    acc = np.zeros((mesh.n_vertices, 3))
    for c in range(3):
        np.add.at(acc, mesh.faces[:, c], weights[:, c, None] * normals)
    norms = np.linalg.norm(acc, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        v = int(bad[0])
        raise ZeroNormalError(f"weighted normal at vertex {v} vanishes", vertex=v)
    return VertexVectors(acc / norms[:, None])


def conformal_factors(mesh: TriMesh, embedding: "PlanarEmbedding") -> VertexScalars:
    """One-ring area in 3D over one-ring area in the plane."""
    area_2d = embedding.signed_areas(mesh)
    ring_3d = ring_sum(mesh, np.repeat(face_areas(mesh)[:, None], 3, axis=1))
    ring_2d = ring_sum(mesh, np.repeat(area_2d[:, None], 3, axis=1))
    bad = np.flatnonzero(ring_2d <= 0)
    if bad.size:
        v = int(bad[0])
        f = int(np.flatnonzero(np.any(mesh.faces == v, axis=1))[0])
        raise DegenerateFaceError(f"planar one-ring of vertex {v} has non-positive area", face=f)
    return VertexScalars(ring_3d / ring_2d, Quantity.CONFORMAL_FACTOR)


def qc_distortion(mesh: TriMesh, embedding: "PlanarEmbedding", allow_flips: bool = False) -> DistortionStats:
    """
    Per-face sigma1/sigma2 of the linear map from the 3D triangle, laid flat
    isometrically, to its planar image. Flipped or collapsed images raise unless
    ``allow_flips``; then they are counted and left out of mean and max.
    """
    p = mesh.vertices[mesh.faces]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    cross = np.linalg.norm(np.cross(e1, e2), axis=1)
    bad = np.flatnonzero((l1 <= 0) | (cross <= 0))
    if bad.size:
        raise DegenerateFaceError(f"face {bad[0]} has zero area in 3D", face=int(bad[0]))
    # isometric 2D frame of each source triangle
    src = np.zeros((len(p), 2, 2))
    src[:, 0, 0] = l1
    src[:, 0, 1] = np.einsum("ij,ij->i", e2, e1) / l1
    src[:, 1, 1] = cross / l1

    uv = embedding.uv[mesh.faces]
    dst = np.stack([uv[:, 1] - uv[:, 0], uv[:, 2] - uv[:, 0]], axis=2)
    det = dst[:, 0, 0] * dst[:, 1, 1] - dst[:, 0, 1] * dst[:, 1, 0]
    flipped = det <= 0
    if flipped.any() and not allow_flips:
        f = int(np.flatnonzero(flipped)[0])
        raise DegenerateFaceError(f"face {f} is flipped or collapsed in the embedding", face=f)

    ratios = np.full(len(p), np.nan)
    ok = ~flipped
    if ok.any():
        jac = dst[ok] @ np.linalg.inv(src[ok])
        sv = np.linalg.svd(jac, compute_uv=False)
        ratios[ok] = sv[:, 0] / sv[:, 1]
    degenerate = int(np.count_nonzero(det == 0))
    valid = ratios[ok]
    return DistortionStats(
        ratios=ratios,
        mean=float(valid.mean()) if valid.size else float("nan"),
        max=float(valid.max()) if valid.size else float("nan"),
        flipped=int(np.count_nonzero(flipped)) - degenerate,
        degenerate=degenerate,
    )

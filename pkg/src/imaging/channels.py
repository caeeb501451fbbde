from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import shapely

from geometry.errors import DimensionMismatchError, EmptyFootprintError
from geometry.layout import PlanarEmbedding, Projection
from geometry.measures import Quantity, VertexScalars, VertexVectors
from ingestion.mesh import TriMesh

logger = logging.getLogger(__name__)

CHANNELS: Tuple[str, ...] = ("R", "G", "B", "Nx", "Ny", "Nz", "K", "CF", "D")
DEFAULT_WIDTH = 182
DEFAULT_HEIGHT = 182
MARGIN_PX = 2
DEFAULT_GRAY = 128.0
INSIDE_TOL = -1e-12
# channel ranges at or below this relative size normalise to 0
FLAT_RANGE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class ChannelImage:
    """
    Nine planar float32 channels of shape (height, width), a footprint mask and
    the (min, max) each channel was normalised with.
    """

    data: np.ndarray
    mask: np.ndarray
    normalization: np.ndarray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        norm = np.ascontiguousarray(self.normalization, dtype=np.float32)
        if data.ndim != 3 or data.shape[0] != len(CHANNELS):
            raise DimensionMismatchError(f"expected {len(CHANNELS)} channel planes, got shape {data.shape}")
        if mask.shape != data.shape[1:]:
            raise DimensionMismatchError("mask shape does not match the channel planes")
        if norm.shape != (len(CHANNELS), 2):
            raise DimensionMismatchError("normalization needs one (min, max) pair per channel")
        if np.any(data[:, ~mask] != 0):
            raise ValueError("pixels outside the mask must be 0 in every channel")
        inside = data[:, mask]
        if inside.size and (inside.min() < 0 or inside.max() > 255):
            raise ValueError("in-mask samples must lie in [0, 255]")
        for arr in (data, mask, norm):
            arr.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "normalization", norm)

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return self.data[CHANNELS.index(name)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChannelImage):
            return NotImplemented
        return (
            self.data.tobytes() == other.data.tobytes()
            and self.data.shape == other.data.shape
            and np.array_equal(self.mask, other.mask)
            and self.normalization.tobytes() == other.normalization.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


# -----------------------------
# Per-vertex table
# -----------------------------
def assemble_channels(
    mesh: TriMesh,
    embedding: PlanarEmbedding,
    normals: VertexVectors,
    curvature: VertexScalars,
    factors: Optional[VertexScalars] = None,
) -> pd.DataFrame:
    """
    One row per vertex with columns R, G, B, Nx, Ny, Nz, K, CF, D. Missing colors
    are mid-grey, D is z relative to the vertex centroid, and CF is 1.0 when no
    conformal factors are given (orthographic embeddings only).
    """
    n = mesh.n_vertices
    for label, count in (("embedding", len(embedding)), ("normals", len(normals)), ("curvature", len(curvature))):
        if count != n:
            raise DimensionMismatchError(f"{label} has {count} entries, mesh has {n} vertices")
    if factors is None:
        if embedding.source is not Projection.ORTHOGRAPHIC:
            raise ValueError("conformal factors are required for a conformal embedding")
        cf = np.ones(n)
    else:
        if len(factors) != n:
            raise DimensionMismatchError(f"factors has {len(factors)} entries, mesh has {n} vertices")
        if factors.quantity is not Quantity.CONFORMAL_FACTOR:
            raise ValueError(f"expected conformal factors, got {factors.quantity.value}")
        cf = factors.values

    colors = mesh.colors if mesh.colors is not None else np.full((n, 3), DEFAULT_GRAY)
    z = mesh.vertices[:, 2]
    table = pd.DataFrame(
        {
            "R": colors[:, 0],
            "G": colors[:, 1],
            "B": colors[:, 2],
            "Nx": normals.values[:, 0],
            "Ny": normals.values[:, 1],
            "Nz": normals.values[:, 2],
            "K": curvature.values,
            "CF": cf,
            "D": z - z.mean(),
        },
        columns=list(CHANNELS),
    )
    table.index.name = "vertex_index"
    return table


# -----------------------------
# Rasterization
# -----------------------------
def raster_coordinates(uv: np.ndarray, width: int, height: int) -> np.ndarray:
    """
    Maps uv into pixel space (x right, y down) with a uniform scale, centred,
    leaving MARGIN_PX pixels on the tighter side.
    """
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    span = hi - lo
    room = np.array([width - 2 * MARGIN_PX, height - 2 * MARGIN_PX], dtype=np.float64)
    scales = [room[k] / span[k] for k in range(2) if span[k] > 0]
    if not scales:
        raise EmptyFootprintError("embedding collapses to a single point")
    s = min(scales)
    centre = 0.5 * (lo + hi)
    x = (uv[:, 0] - centre[0]) * s + 0.5 * width
    y = 0.5 * height - (uv[:, 1] - centre[1]) * s
    return np.column_stack([x, y])


def rasterize(
    table: pd.DataFrame,
    embedding: PlanarEmbedding,
    mesh: TriMesh,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
) -> ChannelImage:
    """
    Samples each pixel centre inside the embedded mesh by barycentric
    interpolation of the vertex rows, then min-max normalises every channel over
    the mask to [0, 255]. Pixels covered by several faces take the lowest face
    index.
    """
    if width < 2 or height < 2:
        raise ValueError("raster must be at least 2x2")
    if list(table.columns) != list(CHANNELS) or len(table) != mesh.n_vertices:
        raise DimensionMismatchError("channel table must have one row per vertex and the nine channel columns")
    if len(embedding) != mesh.n_vertices:
        raise DimensionMismatchError("embedding does not match the mesh")

    xy = raster_coordinates(embedding.uv, width, height)
    tri = xy[mesh.faces]  # (F, 3, 2)

    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    centres = np.column_stack([jj.ravel() + 0.5, ii.ravel() + 0.5])

    tree = shapely.STRtree(shapely.polygons(tri))
    pix, face = tree.query(shapely.points(centres))

    p = centres[pix]
    a, b, c = tri[face, 0], tri[face, 1], tri[face, 2]
    det = _cross(b - a, c - a)
    usable = det != 0
    pix, face, p, a, b, c, det = (arr[usable] for arr in (pix, face, p, a, b, c, det))
    l0 = _cross(b - p, c - p) / det
    l1 = _cross(c - p, a - p) / det
    l2 = 1.0 - l0 - l1
    inside = (l0 >= INSIDE_TOL) & (l1 >= INSIDE_TOL) & (l2 >= INSIDE_TOL)
    pix, face = pix[inside], face[inside]
    bary = np.column_stack([l0[inside], l1[inside], l2[inside]])

    order = np.lexsort((face, pix))
    _, first = np.unique(pix[order], return_index=True)
    keep = order[first]
    pix, face, bary = pix[keep], face[keep], bary[keep]
    if pix.size == 0:
        raise EmptyFootprintError(f"no pixel centre of the {width}x{height} raster falls inside the mesh")

    values = table.to_numpy(dtype=np.float64)
    corner_values = values[mesh.faces[face]]  # (N, 3, C)
    samples = np.einsum("nk,nkc->nc", bary, corner_values)
    # interpolation stays within each column's range; keeps constant columns exact
    samples = np.clip(samples, values.min(axis=0), values.max(axis=0))

    data = np.zeros((len(CHANNELS), height * width), dtype=np.float32)
    norm = np.zeros((len(CHANNELS), 2), dtype=np.float32)
    for ch in range(len(CHANNELS)):
        data[ch, pix], norm[ch] = _normalize(samples[:, ch])
    mask = np.zeros(height * width, dtype=bool)
    mask[pix] = True
    logger.debug("Rasterized %d of %d pixels", pix.size, height * width)
    return ChannelImage(data.reshape(len(CHANNELS), height, width), mask.reshape(height, width), norm)


def _normalize(v: np.ndarray) -> Tuple[np.ndarray, Tuple[float, float]]:
    lo, hi = float(v.min()), float(v.max())
    if hi - lo > FLAT_RANGE_RTOL * max(1.0, abs(lo), abs(hi)):
        out = np.clip((v - lo) / (hi - lo) * 255.0, 0.0, 255.0)
    else:
        out = np.zeros_like(v)
    return out.astype(np.float32), (lo, hi)


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

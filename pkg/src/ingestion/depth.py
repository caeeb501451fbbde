from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app_helpers.utils import atomic_write_bytes
from geometry.errors import FormatError, ParseError, TopologyError
from ingestion.mesh import TriMesh

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# MISSING samples are stored as NaN
MISSING = np.nan


@dataclass(frozen=True, eq=False)
class DepthGrid:
    """Row-major depth samples; ``depth[row, col]``, NaN where the scanner saw nothing."""

    depth: np.ndarray
    spacing: float = 1.0
    colors: Optional[np.ndarray] = None  # (height, width, 3) in [0, 255]

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.ndim != 2:
            raise FormatError("depth must be a 2D array")
        if depth.shape[0] < 2 or depth.shape[1] < 2:
            raise TopologyError(f"depth grid must be at least 2x2, got {depth.shape[1]}x{depth.shape[0]}")
        if np.any(np.isinf(depth)):
            raise FormatError("depth samples must be finite or MISSING")
        if not self.spacing > 0:
            raise FormatError("spacing must be positive")
        if self.colors is not None and np.shape(self.colors) != depth.shape + (3,):
            raise FormatError("colors must have shape (height, width, 3)")
        object.__setattr__(self, "depth", depth)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.depth)


def mesh_from_depth(grid: DepthGrid) -> TriMesh:
    """
    One vertex per present pixel at (col*spacing, row*spacing, depth). Every 2x2
    block with four present pixels gives two triangles split along the NW-SE
    diagonal, wound counter-clockwise in (x, y).
    """
    present = grid.present
    index = np.full(present.shape, -1, dtype=np.int64)
    index[present] = np.arange(int(present.sum()))

    rows, cols = np.nonzero(present)
    vertices = np.column_stack(
        [cols * grid.spacing, rows * grid.spacing, grid.depth[rows, cols]]
    ).astype(np.float64)
    colors = None
    if grid.colors is not None:
        colors = np.asarray(grid.colors, dtype=np.float64)[rows, cols]

    nw, ne = index[:-1, :-1], index[:-1, 1:]
    sw, se = index[1:, :-1], index[1:, 1:]
    full = (nw >= 0) & (ne >= 0) & (sw >= 0) & (se >= 0)
    nw, ne, sw, se = nw[full], ne[full], sw[full], se[full]
    faces = np.empty((2 * len(nw), 3), dtype=np.int64)
    faces[0::2] = np.column_stack([nw, se, sw])
    faces[1::2] = np.column_stack([nw, ne, se])

    if len(faces) == 0:
        raise TopologyError("depth grid has no complete 2x2 block of samples")
    mesh = TriMesh(vertices, faces, colors)
    logger.debug("Depth grid %dx%d -> %s", grid.width, grid.height, mesh)
    return mesh


# -----------------------------
# Readers
# -----------------------------
def load_depth(path: PathLike, spacing: float = 1.0, depth_scale: float = 1.0) -> DepthGrid:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm_depth(path, spacing=spacing, depth_scale=depth_scale)
    if suffix == ".csv":
        return read_csv_depth(path, spacing=spacing, depth_scale=depth_scale)
    raise ParseError(f"unsupported depth file suffix '{path.suffix}' (expected .pgm or .csv)")


def read_csv_depth(path: PathLike, spacing: float = 1.0, depth_scale: float = 1.0) -> DepthGrid:
    """Plain numeric grid, one row per line; empty cells are MISSING."""
    try:
        df = pd.read_csv(path, header=None, skip_blank_lines=True, dtype=float)
    except (ValueError, pd.errors.ParserError) as exc:
        raise ParseError(f"malformed depth CSV: {exc}") from None
    return DepthGrid(df.to_numpy(dtype=np.float64) * depth_scale, spacing=spacing)


def read_pgm_depth(path: PathLike, spacing: float = 1.0, depth_scale: float = 1.0) -> DepthGrid:
    """P2 or P5 (8 or 16 bit); pixels at the maximum grey value are MISSING."""
    width, height, maxval, gray = parse_pgm(Path(path).read_bytes())
    depth = gray.astype(np.float64) * depth_scale
    depth[gray == maxval] = MISSING
    return DepthGrid(depth, spacing=spacing)


def parse_pgm(data: bytes) -> Tuple[int, int, int, np.ndarray]:
    magic, header, offset = _pgm_header(data)
    width, height, maxval = header
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ParseError(f"bad PGM header {width}x{height} maxval {maxval}")
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[offset:]
        if len(body) < count * dtype.itemsize:
            raise ParseError("PGM raster is truncated")
        gray = np.frombuffer(body, dtype=dtype, count=count).astype(np.int64)
    else:
        try:
            values: List[int] = [int(t) for t in _strip_comments(data[offset:]).split()]
        except ValueError:
            raise ParseError("non-integer sample in P2 raster") from None
        if len(values) < count:
            raise ParseError("PGM raster is truncated")
        gray = np.asarray(values[:count], dtype=np.int64)
    if gray.max(initial=0) > maxval:
        raise ParseError("PGM sample exceeds maxval")
    return width, height, maxval, gray.reshape(height, width)


def _pgm_header(data: bytes):
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"not a PGM file (magic {magic!r})")
    fields: List[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("PGM header is truncated")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise ParseError(f"bad PGM header field {data[start:pos]!r}") from None
    # exactly one whitespace byte separates the header from a binary raster
    return magic, tuple(fields), pos + 1


def _strip_comments(data: bytes) -> str:
    text = data.decode("ascii", errors="strict")
    return "\n".join(line.split("#", 1)[0] for line in io.StringIO(text))


def write_pgm_depth(path: PathLike, grid: DepthGrid, depth_scale: float = 1.0) -> Path:
    """Writes a 16-bit P5 file; MISSING becomes 65535."""
    maxval = 65535
    gray = np.round(np.nan_to_num(grid.depth / depth_scale, nan=maxval)).astype(np.int64)
    if gray.min() < 0 or np.any(gray[grid.present] >= maxval):
        raise FormatError("depth values do not fit a 16-bit PGM at this depth_scale")
    header = f"P5\n{grid.width} {grid.height}\n{maxval}\n".encode("ascii")
    return atomic_write_bytes(Path(path), header + gray.astype(">u2").tobytes())

from __future__ import annotations

import io
import logging
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app_helpers.utils import atomic_write_bytes
from geometry.errors import ParseError
from ingestion.mesh import TriMesh

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class MeshFormat(str, Enum):
    OBJ = "obj"
    PLY = "ply"

    @classmethod
    def from_path(cls, path: PathLike) -> "MeshFormat":
        suffix = Path(path).suffix.lower().lstrip(".")
        try:
            return cls(suffix)
        except ValueError:
            raise ParseError(f"cannot infer mesh format from suffix '{Path(path).suffix}'") from None


def load_mesh(path: PathLike, fmt: Optional[MeshFormat] = None) -> TriMesh:
    """
    Reads an ASCII OBJ or ASCII PLY file into a validated TriMesh.
    Format is inferred from the suffix when not given.
    """
    fmt = MeshFormat(fmt) if fmt is not None else MeshFormat.from_path(path)
    text = Path(path).read_text(encoding="utf-8", errors="strict")
    if fmt is MeshFormat.OBJ:
        vertices, faces, colors = parse_obj(text)
    else:
        vertices, faces, colors = parse_ply(text)
    mesh = TriMesh(vertices, faces, colors)
    logger.debug("Loaded %s from %s", mesh, path)
    return mesh


# -----------------------------
# OBJ
# -----------------------------
def parse_obj(text: str) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """
    Parses ``v`` (3 or 6 floats; the last three are r g b), ``vt``/``vn`` (ignored)
    and ``f`` records. Polygons are fan-triangulated, ``v/vt/vn`` tokens keep the
    position index, negative indices count back from the last vertex.
    """
    vertices: List[List[float]] = []
    colors: List[List[float]] = []
    faces: List[Tuple[int, int, int]] = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        tag = tokens[0]
        if tag == "v":
            values = _floats(tokens[1:], lineno)
            if len(values) == 3:
                vertices.append(values)
            elif len(values) == 6:
                vertices.append(values[:3])
                colors.append(values[3:])
            else:
                raise ParseError(f"vertex record needs 3 or 6 numbers, got {len(values)}", line=lineno)
        elif tag == "f":
            if len(tokens) < 4:
                raise ParseError("face record needs at least 3 corners", line=lineno)
            poly = [_obj_index(tok, len(vertices), lineno) for tok in tokens[1:]]
            faces.extend(_fan(poly))
        # vt, vn, o, g, s, usemtl, mtllib carry nothing we keep

    if not vertices:
        raise ParseError("no vertices")
    if colors and len(colors) != len(vertices):
        raise ParseError("vertex colors present on some vertices only")
    col = None
    if colors:
        col = np.asarray(colors, dtype=np.float64)
        # unit-range colors only when some component is fractional; all-integer values stay 0-255
        if col.max(initial=0.0) <= 1.0 and np.any(col != np.round(col)):
            col = col * 255.0
    return np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64), col


def _obj_index(token: str, n_seen: int, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ParseError(f"bad face index '{token}'", line=lineno) from None
    if idx == 0:
        raise ParseError("face index 0 is invalid (OBJ indices are 1-based)", line=lineno)
    resolved = idx - 1 if idx > 0 else n_seen + idx
    if resolved < 0 or resolved >= n_seen:
        raise ParseError(f"face index {idx} refers to an undefined vertex", line=lineno)
    return resolved


# -----------------------------
# PLY (ASCII)
# -----------------------------
def parse_ply(text: str) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1)

    elements: List[Tuple[str, int, List[Tuple[str, ...]]]] = []
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError(f"unsupported PLY format '{' '.join(tokens[1:])}' (ASCII only)", line=lineno)
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element declaration", line=lineno)
            elements.append((tokens[1], _int(tokens[2], lineno), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element", line=lineno)
            elements[-1][2].append(tuple(tokens[1:]))
        elif tokens[0] == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(f"unknown header keyword '{tokens[0]}'", line=lineno)
    if body_start is None:
        raise ParseError("missing end_header")

    cursor = body_start  # 0-based index of the first body line
    vertices = colors = None
    faces: List[Tuple[int, int, int]] = []
    for name, count, props in elements:
        rows = []
        for k in range(count):
            if cursor + k >= len(lines):
                raise ParseError(f"file ends inside element '{name}'", line=cursor + k + 1)
            rows.append(lines[cursor + k].split())
        first_line = cursor + 1
        cursor += count
        if name == "vertex":
            vertices, colors = _ply_vertices(rows, props, first_line)
        elif name == "face":
            faces = _ply_faces(rows, props, first_line, 0 if vertices is None else len(vertices))

    if vertices is None:
        raise ParseError("no vertex element")
    return vertices, np.asarray(faces, dtype=np.int64), colors


def _ply_vertices(rows: Sequence[Sequence[str]], props: Sequence[Tuple[str, ...]], first_line: int):
    names = [p[-1] for p in props]
    if any(p[0] == "list" for p in props):
        raise ParseError("list properties on vertices are not supported", line=first_line)
    try:
        ix = [names.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x/y/z", line=first_line) from None
    has_color = all(c in names for c in ("red", "green", "blue"))
    ic = [names.index(c) for c in ("red", "green", "blue")] if has_color else []

    pos = np.empty((len(rows), 3))
    col = np.empty((len(rows), 3)) if has_color else None
    for k, row in enumerate(rows):
        if len(row) != len(names):
            raise ParseError(f"vertex row has {len(row)} values, header declares {len(names)}", line=first_line + k)
        values = _floats(row, first_line + k)
        pos[k] = [values[i] for i in ix]
        if col is not None:
            col[k] = [values[i] for i in ic]
    if col is not None and col.max(initial=0.0) <= 1.0 and any(
        props[i][0] in ("float", "float32", "double", "float64") for i in ic
    ):
        col = col * 255.0
    return pos, col


def _ply_faces(rows, props, first_line: int, n_vertices: int) -> List[Tuple[int, int, int]]:
    faces: List[Tuple[int, int, int]] = []
    list_props = [p for p in props if p[0] == "list" and p[-1] in ("vertex_indices", "vertex_index")]
    if not list_props:
        raise ParseError("face element lacks a vertex_indices list", line=first_line)
    for k, row in enumerate(rows):
        lineno = first_line + k
        if not row:
            raise ParseError("empty face row", line=lineno)
        n = _int(row[0], lineno)
        if n < 3 or len(row) < n + 1:
            raise ParseError("face row shorter than its declared corner count", line=lineno)
        poly = [_int(tok, lineno) for tok in row[1 : n + 1]]
        for idx in poly:
            if idx < 0 or idx >= n_vertices:
                raise ParseError(f"face index {idx} out of range", line=lineno)
        faces.extend(_fan(poly))
    return faces


# -----------------------------
# Writers
# -----------------------------
def save_mesh(mesh: TriMesh, path: PathLike, fmt: Optional[MeshFormat] = None) -> Path:
    fmt = MeshFormat(fmt) if fmt is not None else MeshFormat.from_path(path)
    if fmt is MeshFormat.OBJ:
        return write_obj(path, mesh.vertices, mesh.faces, mesh.colors)
    return write_ply(path, mesh.vertices, mesh.faces, mesh.colors)


def write_obj(
    path: PathLike,
    vertices: np.ndarray,
    faces: np.ndarray,
    colors: Optional[np.ndarray] = None,
) -> Path:
    """Floats are written with repr() so a reload reproduces them bit-exactly."""
    out = io.StringIO()
    for k, p in enumerate(np.asarray(vertices, dtype=np.float64)):
        line = "v " + " ".join(repr(float(x)) for x in p)
        if colors is not None:
            line += " " + " ".join(repr(float(c)) for c in colors[k])
        out.write(line + "\n")
    for f in np.asarray(faces):
        out.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    return _write_text(path, out.getvalue())


def write_ply(
    path: PathLike,
    vertices: np.ndarray,
    faces: np.ndarray,
    colors: Optional[np.ndarray] = None,
) -> Path:
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {len(vertices)}\n")
    out.write("property double x\nproperty double y\nproperty double z\n")
    if colors is not None:
        out.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
    out.write(f"element face {len(faces)}\n")
    out.write("property list uchar int vertex_indices\nend_header\n")
    for k, p in enumerate(np.asarray(vertices, dtype=np.float64)):
        line = " ".join(repr(float(x)) for x in p)
        if colors is not None:
            line += " " + " ".join(str(int(round(c))) for c in colors[k])
        out.write(line + "\n")
    for f in np.asarray(faces):
        out.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    return _write_text(path, out.getvalue())


def _write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(Path(path), text.encode("utf-8"))


# -----------------------------
# Helpers
# -----------------------------
def _fan(poly: Sequence[int]) -> Iterable[Tuple[int, int, int]]:
    for a, b in zip(poly[1:], poly[2:]):
        yield (poly[0], a, b)


def _floats(tokens: Sequence[str], lineno: int) -> List[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected numbers, got {' '.join(tokens)!r}", line=lineno) from None
    if not all(np.isfinite(values)):
        raise ParseError("non-finite number", line=lineno)
    return values


def _int(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"expected an integer, got {token!r}", line=lineno) from None

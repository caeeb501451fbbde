from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry.registration import RigidTransform, apply_transform
from ingestion.depth import DepthGrid, mesh_from_depth, write_pgm_depth
from ingestion.mesh import TriMesh
from ingestion.readers import save_mesh

logger = logging.getLogger(__name__)

CAP_RINGS = 18  # 1 + 3*18*19 = 1027 vertices
CAP_POLAR_ANGLE = np.pi / 3
HEMISPHERE_POLAR_ANGLE = 0.45 * np.pi
FACE_SPACING_MM = 2.5
FACE_HALF_WIDTH_MM = 60.0
FACE_HALF_HEIGHT_MM = 75.0
FACE_DEPTH_SCALE = 0.01  # mm per grey level in the PGM fixture
SKIN = np.array([224.0, 172.0, 150.0])


# -----------------------------
# Flat and polyhedral meshes
# -----------------------------
def flat_grid(n: int, m: Optional[int] = None, spacing: float = 1.0) -> TriMesh:
    """n x m vertex grid in the z=0 plane, counter-clockwise faces."""
    m = n if m is None else m
    return mesh_from_depth(DepthGrid(np.zeros((m, n)), spacing=spacing))


def square_pyramid() -> TriMesh:
    """Open square pyramid with four unit equilateral faces; the apex is interior."""
    h = 1.0 / np.sqrt(2.0)
    vertices = np.array(
        [[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, h]]
    )
    faces = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return TriMesh(vertices, faces)


# -----------------------------
# Sphere patches
# -----------------------------
def spherical_cap(rings: int = CAP_RINGS, polar_angle: float = CAP_POLAR_ANGLE, radius: float = 1.0) -> TriMesh:
    """
    Patch of the sphere around the +z pole. Ring k (1..rings) sits at polar
    angle k*polar_angle/rings and carries 6k vertices, so triangles stay close
    to equilateral; vertex 0 is the pole.
    """
    if rings < 1:
        raise ValueError("need at least one ring")
    if not 0 < polar_angle < np.pi:
        raise ValueError("polar angle must lie in (0, pi)")
    vertices: List[Tuple[float, float, float]] = [(0.0, 0.0, radius)]
    ring_ids: List[np.ndarray] = [np.array([0])]
    for k in range(1, rings + 1):
        phi = k * polar_angle / rings
        beta = 2.0 * np.pi * np.arange(6 * k) / (6 * k)
        start = len(vertices)
        vertices.extend(
            zip(radius * np.sin(phi) * np.cos(beta), radius * np.sin(phi) * np.sin(beta), np.full(6 * k, radius * np.cos(phi)))
        )
        ring_ids.append(np.arange(start, start + 6 * k))

    faces: List[Tuple[int, int, int]] = []
    for inner, outer in zip(ring_ids[:-1], ring_ids[1:]):
        faces.extend(_ring_strip(inner, outer))
    return TriMesh(np.asarray(vertices), np.asarray(faces))


def hemisphere(rings: int = CAP_RINGS) -> TriMesh:
    """Near-hemisphere (polar angle up to 81 degrees)."""
    return spherical_cap(rings, HEMISPHERE_POLAR_ANGLE)


def _ring_strip(inner: np.ndarray, outer: np.ndarray) -> List[Tuple[int, int, int]]:
    m, n_out = len(inner), len(outer)
    if m == 1:
        return [(int(inner[0]), int(outer[b]), int(outer[(b + 1) % n_out])) for b in range(n_out)]
    faces: List[Tuple[int, int, int]] = []
    a = b = 0
    while a < m or b < n_out:
        # advance whichever ring's next vertex comes first in angle
        if a == m or (b < n_out and (b + 1) * m <= (a + 1) * n_out):
            faces.append((int(inner[a % m]), int(outer[b]), int(outer[(b + 1) % n_out])))
            b += 1
        else:
            faces.append((int(inner[a]), int(outer[b % n_out]), int(inner[(a + 1) % m])))
            a += 1
    return faces


# -----------------------------
# Synthetic face
# -----------------------------
def _gauss(x, y, cx, cy, sx, sy):
    return np.exp(-((x - cx) ** 2 / (2 * sx**2) + (y - cy) ** 2 / (2 * sy**2)))


def face_surface(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Height in mm toward the viewer; y grows toward the forehead."""
    base = 40.0 * np.sqrt(np.clip(1.0 - (x / 95.0) ** 2 - (y / 120.0) ** 2, 0.0, None))
    nose = 12.0 * _gauss(x, y, 0.0, -5.0, 7.0, 16.0)
    brows = 4.0 * (_gauss(x, y, -25.0, 30.0, 10.0, 5.0) + _gauss(x, y, 25.0, 30.0, 10.0, 5.0))
    eyes = -5.0 * (_gauss(x, y, -30.0, 15.0, 9.0, 7.0) + _gauss(x, y, 30.0, 15.0, 9.0, 7.0))
    lips = 2.5 * _gauss(x, y, 0.0, -45.0, 14.0, 4.0)
    return base + nose + brows + eyes + lips


def face_colors(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Skin tone with darker brows and eyes, reddish lips and a soft side falloff."""
    shade = 1.0 - 0.15 * (x / FACE_HALF_WIDTH_MM) ** 2
    rgb = SKIN * shade[..., None]
    brow = (_gauss(x, y, -25.0, 30.0, 10.0, 4.0) + _gauss(x, y, 25.0, 30.0, 10.0, 4.0))[..., None]
    eye = (_gauss(x, y, -30.0, 15.0, 6.0, 3.5) + _gauss(x, y, 30.0, 15.0, 6.0, 3.5))[..., None]
    lip = _gauss(x, y, 0.0, -45.0, 12.0, 3.5)[..., None]
    rgb = rgb * (1 - brow) + np.array([110.0, 80.0, 60.0]) * brow
    rgb = rgb * (1 - eye) + np.array([70.0, 50.0, 45.0]) * eye
    rgb = rgb * (1 - lip) + np.array([190.0, 90.0, 90.0]) * lip
    return np.clip(rgb, 0.0, 255.0)


def synthetic_face_grid(spacing: float = FACE_SPACING_MM) -> DepthGrid:
    """Depth grid of the synthetic face; row r holds y = r*spacing - 75 mm."""
    cols = int(round(2 * FACE_HALF_WIDTH_MM / spacing)) + 1
    rows = int(round(2 * FACE_HALF_HEIGHT_MM / spacing)) + 1
    x = np.arange(cols) * spacing - FACE_HALF_WIDTH_MM
    y = np.arange(rows) * spacing - FACE_HALF_HEIGHT_MM
    xx, yy = np.meshgrid(x, y)
    return DepthGrid(face_surface(xx, yy), spacing=spacing, colors=face_colors(xx, yy))


def synthetic_face(spacing: float = FACE_SPACING_MM) -> TriMesh:
    """Face-like height field in mm, centred on the origin, with vertex colors."""
    mesh = mesh_from_depth(synthetic_face_grid(spacing))
    return mesh.with_vertices(mesh.vertices - np.array([FACE_HALF_WIDTH_MM, FACE_HALF_HEIGHT_MM, 0.0]))


# -----------------------------
# Pose variants
# -----------------------------
def rotated(mesh: TriMesh, degrees: float, axis: Sequence[float] = (1.0, 0.0, 0.0)) -> TriMesh:
    """Rotation about ``axis`` through the vertex centroid."""
    c = mesh.vertices.mean(axis=0)
    rot = RigidTransform.about_axis(axis, degrees)
    return apply_transform(mesh, RigidTransform(rot.rotation, c - rot.rotation @ c))


def profile_rotated(mesh: TriMesh) -> TriMesh:
    """Quarter turn about x, turning a frontal scan into a profile view."""
    return rotated(mesh, 90.0)


# -----------------------------
# Writer
# -----------------------------
def fixture_meshes() -> Dict[str, TriMesh]:
    face = synthetic_face()
    hemi = hemisphere()
    return {
        "flat_5x5": flat_grid(5),
        "flat_50x50": flat_grid(50),
        "cap": spherical_cap(),
        "cap_coarse": spherical_cap(CAP_RINGS // 2),
        "hemisphere": hemi,
        "hemisphere_rot30": rotated(hemi, 30.0),
        "pyramid": square_pyramid(),
        "face": face,
        "face_rot30": rotated(face, 30.0),
        "face_profile": profile_rotated(face),
    }


def write_fixtures(out_dir: Path, fmt: str = "obj") -> List[Path]:
    """Writes every fixture mesh plus the face as a 16-bit depth PGM."""
    out_dir = Path(out_dir)
    written = []
    for name, mesh in fixture_meshes().items():
        written.append(save_mesh(mesh, out_dir / f"{name}.{fmt}"))
        logger.info("Wrote %s: %s", written[-1].name, mesh)
    written.append(write_pgm_depth(out_dir / "face_depth.pgm", synthetic_face_grid(), depth_scale=FACE_DEPTH_SCALE))
    return written


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Generate deterministic fixture meshes")
    parser.add_argument("--out", default="fixtures")
    parser.add_argument("--format", default="obj", choices=["obj", "ply"])
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    for path in write_fixtures(Path(args.out), fmt=args.format):
        print(path)

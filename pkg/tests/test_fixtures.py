import numpy as np
import pytest

from data_sources.fixtures import (
    FACE_DEPTH_SCALE,
    fixture_meshes,
    rotated,
    spherical_cap,
    square_pyramid,
    synthetic_face,
    synthetic_face_grid,
    write_fixtures,
)
from geometry.measures import angle_deficit_curvature
from ingestion.depth import load_depth, mesh_from_depth
from ingestion.readers import load_mesh


def test_cap_counts():
    cap = spherical_cap()
    assert cap.n_vertices == 1 + 3 * 18 * 19
    assert cap.n_faces == 6 * 18 * 18
    assert np.allclose(np.linalg.norm(cap.vertices, axis=1), 1.0)
    assert len(cap.boundary_loop()) == 6 * 18


def test_pyramid_apex_is_interior():
    mesh = square_pyramid()
    assert mesh.interior.tolist() == [4]
    assert angle_deficit_curvature(mesh).values[4] == pytest.approx(2 * np.pi / 3)


def test_synthetic_face_extent_and_colors():
    face = synthetic_face()
    lo, hi = face.vertices.min(axis=0), face.vertices.max(axis=0)
    assert lo[:2] == pytest.approx([-60.0, -75.0])
    assert hi[:2] == pytest.approx([60.0, 75.0])
    assert face.colors is not None
    assert face.colors.min() >= 0 and face.colors.max() <= 255
    # nose tip stands out of the cheeks
    nose = np.argmin(np.linalg.norm(face.vertices[:, :2] - [0.0, -5.0], axis=1))
    cheek = np.argmin(np.linalg.norm(face.vertices[:, :2] - [45.0, -5.0], axis=1))
    assert face.vertices[nose, 2] > face.vertices[cheek, 2] + 10.0


def test_rotation_keeps_lengths():
    face = synthetic_face(spacing=10.0)
    turned = rotated(face, 30.0)
    assert np.allclose(turned.edge_lengths(), face.edge_lengths())
    assert np.allclose(turned.vertices.mean(axis=0), face.vertices.mean(axis=0))


def test_fixtures_are_deterministic():
    first, second = fixture_meshes(), fixture_meshes()
    assert list(first) == list(second)
    for name in first:
        assert np.array_equal(first[name].vertices, second[name].vertices), name


def test_write_fixtures(tmp_path):
    written = write_fixtures(tmp_path)
    names = {p.name for p in written}
    assert {"cap.obj", "cap_coarse.obj", "flat_5x5.obj", "pyramid.obj", "face_profile.obj", "face_depth.pgm"} <= names
    assert load_mesh(tmp_path / "cap.obj").n_vertices == 1027

    grid = load_depth(tmp_path / "face_depth.pgm", spacing=2.5, depth_scale=FACE_DEPTH_SCALE)
    assert grid.depth == pytest.approx(synthetic_face_grid().depth, abs=FACE_DEPTH_SCALE)
    assert mesh_from_depth(grid).n_vertices == synthetic_face().n_vertices

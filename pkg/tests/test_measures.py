import numpy as np
import pytest

from data_sources.fixtures import flat_grid, spherical_cap, square_pyramid, synthetic_face
from geometry.layout import PlanarEmbedding, Projection, orthographic
from geometry.measures import (
    Quantity,
    VertexScalars,
    angle_deficit_curvature,
    angles_from_lengths,
    conformal_factors,
    corner_angles,
    face_areas,
    qc_distortion,
    ring_sum,
    vertex_normals,
    weighted_curvature,
)
from ingestion.depth import DepthGrid, mesh_from_depth
from ingestion.mesh import TriMesh


def _stretched(mesh, sx=1.0, sy=1.0):
    uv = mesh.vertices[:, :2] * np.array([sx, sy])
    return PlanarEmbedding(uv, Projection.ORTHOGRAPHIC)


def test_corner_angles_of_known_triangles():
    equilateral = angles_from_lengths(np.array([[1.0, 1.0, 1.0]]))
    assert equilateral[0] == pytest.approx([np.pi / 3] * 3)
    right = angles_from_lengths(np.array([[np.sqrt(2.0), 1.0, 1.0]]))
    assert right[0] == pytest.approx([np.pi / 2, np.pi / 4, np.pi / 4])
    assert angles_from_lengths(np.array([[3.0, 4.0, 5.0]]))[0] == pytest.approx(
        [0.6435, 0.9273, 1.5708], abs=1e-4
    )


def test_corner_angles_from_a_mesh():
    mesh = TriMesh([[4.0, 0, 0], [0, 3.0, 0], [0, 0, 0]], [[0, 1, 2]])
    assert corner_angles(mesh)[0] == pytest.approx([0.6435, 0.9273, 1.5708], abs=1e-4)


def test_flat_grid_deficits():
    mesh = flat_grid(3)
    k = angle_deficit_curvature(mesh).values
    assert k[4] == pytest.approx(0.0, abs=1e-12)
    for corner in (0, 2, 6, 8):
        assert k[corner] == pytest.approx(np.pi / 2)
    assert weighted_curvature(mesh).values[4] == pytest.approx(0.0, abs=1e-12)


def test_pyramid_apex():
    mesh = square_pyramid()
    assert angle_deficit_curvature(mesh).values[4] == pytest.approx(2 * np.pi / 3)
    assert weighted_curvature(mesh).values[4] == pytest.approx(np.pi / np.sqrt(3))


@pytest.mark.parametrize(
    "mesh",
    [flat_grid(5), square_pyramid(), spherical_cap(rings=6), synthetic_face(spacing=10.0)],
    ids=["flat", "pyramid", "cap", "face"],
)
def test_total_curvature_of_a_disk_is_two_pi(mesh):
    assert angle_deficit_curvature(mesh).values.sum() == pytest.approx(2 * np.pi, abs=1e-6)


def test_sphere_curvature_converges_under_refinement():
    poles = [weighted_curvature(spherical_cap(rings=n)).values[0] for n in (4, 8, 16)]
    errors = [abs(k - 0.5) for k in poles]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.05
    barycentric = weighted_curvature(spherical_cap(rings=16), prefactor=3.0).values[0]
    assert barycentric == pytest.approx(1.0, abs=0.1)


def test_flat_normals_point_up():
    normals = vertex_normals(flat_grid(4)).values
    assert np.allclose(normals, [0.0, 0.0, 1.0])
    raised = mesh_from_depth(DepthGrid(np.full((3, 4), 7.0)))
    assert np.allclose(np.abs(vertex_normals(raised).values[:, 2]), 1.0)


def _max_normal_error(mesh):
    normals = vertex_normals(mesh).values
    radial = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
    return float(np.arccos(np.clip(np.einsum("ij,ij->i", normals, radial), -1.0, 1.0)).max())


def test_sphere_normals_are_radial():
    errors = [_max_normal_error(spherical_cap(rings=n)) for n in (4, 8, 16)]
    assert errors[0] > errors[1] > errors[2]
    assert _max_normal_error(spherical_cap(rings=18)) < 0.05


def test_conformal_factors_of_scaled_flat_embedding():
    mesh = flat_grid(4)
    assert np.allclose(conformal_factors(mesh, orthographic(mesh)).values, 1.0)
    assert np.allclose(conformal_factors(mesh, orthographic(mesh).scaled(2.0)).values, 0.25)


def test_qc_distortion_identity_and_stretch():
    mesh = flat_grid(4)
    identity = qc_distortion(mesh, orthographic(mesh))
    assert np.allclose(identity.ratios, 1.0)
    assert identity.mean == pytest.approx(1.0)
    stretched = qc_distortion(mesh, _stretched(mesh, sx=2.0))
    assert np.allclose(stretched.ratios, 2.0)
    assert stretched.max == pytest.approx(2.0)


def test_flipped_embedding_is_counted_or_rejected():
    mesh = flat_grid(3)
    mirrored = _stretched(mesh, sx=-1.0)
    with pytest.raises(ValueError):
        qc_distortion(mesh, mirrored)
    stats = qc_distortion(mesh, mirrored, allow_flips=True)
    assert stats.flipped == mesh.n_faces
    assert np.isnan(stats.mean)


def test_vertex_scalars_validation(tmp_path):
    with pytest.raises(ValueError):
        VertexScalars(np.array([1.0, np.nan]), Quantity.DEPTH)
    with pytest.raises(ValueError):
        VertexScalars(np.array([1.0, 0.0]), Quantity.CONFORMAL_FACTOR)
    scalars = VertexScalars(np.array([0.5, 2.0]), Quantity.CONFORMAL_FACTOR)
    frame = scalars.to_frame()
    assert frame["value"].tolist() == [0.5, 2.0]
    assert scalars.to_csv(tmp_path / "cf.csv").read_text().startswith("vertex_index,value")


def test_ring_sum_of_face_areas_covers_three_times_the_area():
    mesh = spherical_cap(rings=5)
    areas = face_areas(mesh)
    rings = ring_sum(mesh, np.repeat(areas[:, None], 3, axis=1))
    assert rings.sum() == pytest.approx(3 * areas.sum())


@pytest.mark.parametrize("s", [0.01, 3.7])
def test_normals_ignore_uniform_scaling(s):
    mesh = synthetic_face(spacing=10.0)
    scaled = mesh.with_vertices(mesh.vertices * s)
    assert np.allclose(vertex_normals(scaled).values, vertex_normals(mesh).values, rtol=0.0, atol=1e-12)


@pytest.mark.parametrize("s", [0.5, 4.0])
def test_weighted_curvature_scales_inverse_square(s):
    mesh = spherical_cap(rings=6)
    scaled = mesh.with_vertices(mesh.vertices * s)
    assert np.allclose(weighted_curvature(scaled).values * s**2, weighted_curvature(mesh).values, rtol=1e-9, atol=1e-12)
    assert np.allclose(angle_deficit_curvature(scaled).values, angle_deficit_curvature(mesh).values, atol=1e-12)

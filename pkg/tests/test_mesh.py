import numpy as np
import pytest

from geometry.errors import ParseError, TopologyError
from ingestion.depth import DepthGrid, mesh_from_depth
from ingestion.mesh import TriMesh
from ingestion.readers import load_mesh


def _triangle_obj(tmp_path, face_line="f 1 2 3"):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n" + face_line + "\n")
    return path


def test_single_triangle_obj(tmp_path):
    mesh = load_mesh(_triangle_obj(tmp_path))
    assert (mesh.n_vertices, len(mesh.edges), mesh.n_faces) == (3, 3, 1)
    assert mesh.boundary_flags.all()
    assert mesh.boundary_loop().tolist() == [0, 1, 2]


def test_obj_index_zero_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_mesh(_triangle_obj(tmp_path, "f 0 1 2"))


def test_ply_with_opposite_windings_is_topology_error(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 4\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 2\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
        "3 0 1 2\n3 0 3 2\n"
    )
    with pytest.raises(TopologyError):
        load_mesh(path)


def test_minimal_depth_block():
    mesh = mesh_from_depth(DepthGrid(np.zeros((2, 2))))
    assert mesh.n_vertices == 4
    assert mesh.n_faces == 2
    assert mesh.euler_characteristic == 1
    assert np.allclose(mesh.vertices[:, 2], 0.0)


def test_depth_grid_with_hole_is_not_a_disk():
    depth = np.zeros((3, 3))
    depth[1, 1] = np.nan
    with pytest.raises(TopologyError):
        mesh_from_depth(DepthGrid(depth))

    depth = np.zeros((5, 5))
    depth[2, 2] = np.nan
    with pytest.raises(TopologyError, match="boundary loop"):
        mesh_from_depth(DepthGrid(depth))


def test_ten_by_ten_depth_grid_counts():
    x = np.arange(10, dtype=float)
    depth = np.tile(x**2 / 50.0, (10, 1))
    mesh = mesh_from_depth(DepthGrid(depth))
    assert mesh.n_vertices == 100
    assert mesh.n_faces == 162
    assert mesh.n_vertices - len(mesh.edges) + mesh.n_faces == 1
    assert len(mesh.boundary_loop()) == 36
    assert np.allclose(mesh.vertices[:, 2], mesh.vertices[:, 0] ** 2 / 50.0)


def test_boundary_loop_of_small_grid_is_cyclic():
    mesh = mesh_from_depth(DepthGrid(np.zeros((3, 3))))
    loop = mesh.boundary_loop()
    assert sorted(loop.tolist()) == [0, 1, 2, 3, 5, 6, 7, 8]
    edges = {tuple(e) for e in mesh.edges.tolist()}
    for a, b in zip(loop, np.roll(loop, -1)):
        assert tuple(sorted((int(a), int(b)))) in edges


def test_face_adjacency_is_symmetric():
    mesh = mesh_from_depth(DepthGrid(np.zeros((4, 5))))
    adj = mesh.face_adjacency
    for f in range(mesh.n_faces):
        for g in adj[f]:
            if g >= 0:
                assert f in adj[g]
    # boundary edges have exactly one owner
    assert np.count_nonzero(adj < 0) == len(mesh.boundary_loop())


def test_vertex_faces_lists_every_incidence():
    mesh = mesh_from_depth(DepthGrid(np.zeros((4, 5))))
    table = mesh.vertex_faces
    assert table.shape[0] == mesh.n_vertices
    for v in range(mesh.n_vertices):
        listed = table[v][table[v] >= 0].tolist()
        assert listed == sorted(np.flatnonzero((mesh.faces == v).any(axis=1)).tolist())


def test_closed_and_disconnected_meshes_are_rejected():
    tetra_v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    tetra_f = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
    with pytest.raises(TopologyError):
        TriMesh(tetra_v, tetra_f)

    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]], dtype=float)
    with pytest.raises(TopologyError):
        TriMesh(v, [[0, 1, 2], [3, 4, 5]])


def test_zero_length_edge_is_rejected():
    v = np.array([[0, 0, 0], [0, 0, 0], [0, 1, 0]], dtype=float)
    with pytest.raises(TopologyError, match="zero length"):
        TriMesh(v, [[0, 1, 2]])


def test_mesh_arrays_are_frozen():
    mesh = mesh_from_depth(DepthGrid(np.zeros((3, 3))))
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 1.0
    moved = mesh.with_vertices(mesh.vertices + 1.0)
    assert np.array_equal(moved.faces, mesh.faces)

from __future__ import annotations

import logging
from functools import cached_property
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from geometry.errors import TopologyError

logger = logging.getLogger(__name__)


class TriMesh:
    """
    Indexed triangle mesh with disk topology.

    Construction validates the whole invariant set (manifold edges, consistent
    orientation, single connected component, one boundary loop, V - E + F = 1,
    positive edge lengths) and raises TopologyError naming the first offending
    element. Arrays are frozen afterwards, so a mesh can be shared between tasks.

    Corner c of face f is ``faces[f, c]``; ``face_edges[f, c]`` is the edge
    opposite that corner.
    """

    def __init__(
        self,
        vertices: np.ndarray,
        faces: np.ndarray,
        colors: Optional[np.ndarray] = None,
    ) -> None:
        self.vertices = np.array(vertices, dtype=np.float64)
        self.faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise TopologyError("vertices must be an (n, 3) array")
        if not np.all(np.isfinite(self.vertices)):
            raise TopologyError("vertex positions must be finite")
        if colors is not None:
            colors = np.array(colors, dtype=np.float64)
            if colors.shape != self.vertices.shape:
                raise TopologyError("colors must match the vertex array shape")
            if np.any(colors < 0) or np.any(colors > 255):
                raise TopologyError("colors must lie in [0, 255]")
        self.colors = colors

        self._check_faces()
        self.edges, self.face_edges = _build_edges(self.faces)
        self._check_manifold()
        self._check_connected()
        self._boundary_loop = self._trace_boundary()
        self._check_euler()
        self._check_edge_lengths()

        self.boundary_flags = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_flags[self._boundary_loop] = True

        for arr in (self.vertices, self.faces, self.edges, self.face_edges, self.boundary_flags):
            arr.setflags(write=False)
        if self.colors is not None:
            self.colors.setflags(write=False)

    # -----------------------------
    # Validation
    # -----------------------------
    def _check_faces(self) -> None:
        n = len(self.vertices)
        if len(self.faces) == 0:
            raise TopologyError("mesh has no faces")
        bad = np.flatnonzero(np.any((self.faces < 0) | (self.faces >= n), axis=1))
        if bad.size:
            raise TopologyError(f"face {bad[0]} references an out-of-range vertex", element=int(bad[0]))
        f = self.faces
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        bad = np.flatnonzero(repeated)
        if bad.size:
            raise TopologyError(f"face {bad[0]} repeats a vertex", element=int(bad[0]))
        used = np.zeros(n, dtype=bool)
        used[f.ravel()] = True
        if not used.all():
            v = int(np.flatnonzero(~used)[0])
            raise TopologyError(f"vertex {v} belongs to no face (mesh is disconnected)", element=v)

    def _check_manifold(self) -> None:
        counts = np.bincount(self.face_edges.ravel(), minlength=len(self.edges))
        bad = np.flatnonzero(counts > 2)
        if bad.size:
            i, j = self.edges[bad[0]]
            raise TopologyError(f"non-manifold edge ({i}, {j}) shared by {counts[bad[0]]} faces", element=(int(i), int(j)))

        directed = self._half_edges
        keys = directed[:, 0] * len(self.vertices) + directed[:, 1]
        _, first, counts = np.unique(keys, return_index=True, return_counts=True)
        if np.any(counts > 1):
            i, j = directed[first[np.flatnonzero(counts > 1)[0]]]
            raise TopologyError(
                f"inconsistent face orientation across edge ({i}, {j})", element=(int(i), int(j))
            )

    def _check_connected(self) -> None:
        n = len(self.vertices)
        adj = sparse.coo_matrix(
            (np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])), shape=(n, n)
        )
        n_comp, labels = connected_components(adj, directed=False)
        if n_comp != 1:
            v = int(np.flatnonzero(labels != labels[0])[0])
            raise TopologyError(f"mesh has {n_comp} connected components; vertex {v} is detached", element=v)

    def _trace_boundary(self) -> np.ndarray:
        n = len(self.vertices)
        directed = self._half_edges
        keys = directed[:, 0] * n + directed[:, 1]
        reverse = directed[:, 1] * n + directed[:, 0]
        is_boundary = ~np.isin(reverse, keys)
        bnd = directed[is_boundary]
        if len(bnd) == 0:
            raise TopologyError("mesh has no boundary (closed surfaces are not disks)")

        out_count = np.bincount(bnd[:, 0], minlength=n)
        bad = np.flatnonzero(out_count > 1)
        if bad.size:
            raise TopologyError(f"boundary vertex {bad[0]} is non-manifold (pinched)", element=int(bad[0]))
        nxt = np.full(n, -1, dtype=np.int64)
        nxt[bnd[:, 0]] = bnd[:, 1]

        start = int(bnd[:, 0].min())
        loop: List[int] = [start]
        v = int(nxt[start])
        while v != start:
            loop.append(v)
            v = int(nxt[v])
        if len(loop) != len(bnd):
            stray = sorted(set(bnd[:, 0].tolist()) - set(loop))[0]
            raise TopologyError(
                f"mesh has more than one boundary loop; vertex {stray} lies on an inner loop",
                element=int(stray),
            )
        return np.array(loop, dtype=np.int64)

    def _check_euler(self) -> None:
        chi = self.euler_characteristic
        if chi != 1:
            raise TopologyError(f"Euler characteristic is {chi}, a disk needs 1", element=chi)

    def _check_edge_lengths(self) -> None:
        lengths = self.edge_lengths()
        bad = np.flatnonzero(lengths <= 0)
        if bad.size:
            i, j = self.edges[bad[0]]
            raise TopologyError(f"edge ({i}, {j}) has zero length", element=(int(i), int(j)))

    # -----------------------------
    # Adjacency
    # -----------------------------
    @property
    def _half_edges(self) -> np.ndarray:
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_flags)

    def boundary_loop(self) -> np.ndarray:
        """Boundary vertices in the direction of the faces' boundary half-edges."""
        return self._boundary_loop.copy()

    @cached_property
    def face_adjacency(self) -> np.ndarray:
        """(F, 3) neighbour face across the edge opposite each corner, -1 on the boundary."""
        n_edges = len(self.edges)
        first = np.full(n_edges, -1, dtype=np.int64)
        second = np.full(n_edges, -1, dtype=np.int64)
        flat = self.face_edges.ravel()
        owner = np.repeat(np.arange(len(self.faces)), 3)
        order = np.argsort(flat, kind="stable")
        e_sorted, f_sorted = flat[order], owner[order]
        starts = np.r_[True, e_sorted[1:] != e_sorted[:-1]]
        first[e_sorted[starts]] = f_sorted[starts]
        second[e_sorted[~starts]] = f_sorted[~starts]
        other = np.where(first[self.face_edges] == np.arange(len(self.faces))[:, None],
                         second[self.face_edges], first[self.face_edges])
        other.setflags(write=False)
        return other

    @cached_property
    def vertex_faces(self) -> np.ndarray:
        """(V, k) faces incident to each vertex in ascending order, padded with -1."""
        flat = self.faces.ravel()
        owner = np.repeat(np.arange(len(self.faces)), 3)
        order = np.argsort(flat, kind="stable")
        v_sorted, f_sorted = flat[order], owner[order]
        counts = np.bincount(flat, minlength=len(self.vertices))
        starts = np.r_[0, np.cumsum(counts)[:-1]]
        slot = np.arange(len(flat)) - starts[v_sorted]
        out = np.full((len(self.vertices), int(counts.max())), -1, dtype=np.int64)
        out[v_sorted, slot] = f_sorted
        out.setflags(write=False)
        return out

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(d, axis=1)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity and colors, new positions (revalidated)."""
        return TriMesh(vertices, self.faces, self.colors)

    def __repr__(self) -> str:
        return f"TriMesh(V={self.n_vertices}, E={len(self.edges)}, F={self.n_faces})"


def _build_edges(faces: np.ndarray):
    opposite = np.stack(
        [faces[:, [1, 2]], faces[:, [2, 0]], faces[:, [0, 1]]], axis=1
    ).reshape(-1, 2)
    opposite = np.sort(opposite, axis=1)
    edges, inverse = np.unique(opposite, axis=0, return_inverse=True)
    return edges.astype(np.int64), inverse.reshape(-1, 3).astype(np.int64)

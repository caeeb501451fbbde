from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from geometry.errors import DegenerateConfigurationError
from ingestion.mesh import TriMesh

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-8
# updates closer than this in direction are extrapolated, at most this many steps ahead
EXTRAPOLATE_MAX_TURN_DEG = 10.0
EXTRAPOLATE_MAX_REACH = 25.0


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """p -> R p + t with R a proper rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def about_axis(cls, axis, degrees: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rodrigues rotation about ``axis`` followed by a translation."""
        k = np.asarray(axis, dtype=np.float64)
        k = k / np.linalg.norm(k)
        th = np.radians(degrees)
        kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        r = np.eye(3) + np.sin(th) * kx + (1 - np.cos(th)) * (kx @ kx)
        return cls(r, translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @property
    def rotation_angle_deg(self) -> float:
        c = np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(c)))

    def to_dict(self) -> Dict[str, Any]:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RigidTransform":
        return cls(np.asarray(data["rotation"], dtype=np.float64), np.asarray(data["translation"], dtype=np.float64))


@dataclass
class IcpResult:
    transform: RigidTransform
    rms: float
    rms_history: List[float] = field(default_factory=list)
    iterations: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self.transform.to_dict(),
            "rms": self.rms,
            "iterations": self.iterations,
            "rms_history": list(self.rms_history),
        }

    def __iter__(self):
        return iter((self.transform, self.rms))


# -----------------------------
# Nearest neighbour grid
# -----------------------------
class UniformGrid:
    """
    Buckets points into cubic cells. A query scans the 27 cells around it;
    queries whose best candidate lies farther than one cell fall back to a
    full scan, so the answer is always the exact nearest point.
    """

    _OFFSETS = np.array([(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)])

    def __init__(self, points: np.ndarray, cell: float) -> None:
        if not cell > 0:
            raise ValueError("cell size must be positive")
        self.points = np.asarray(points, dtype=np.float64)
        self.cell = float(cell)
        self.origin = self.points.min(axis=0)
        keys = self._keys(self.points)
        self.shape = keys.max(axis=0) + 1
        flat = self._flat(keys)
        self._order = np.argsort(flat, kind="stable")
        self._sorted = flat[self._order]
        self._max_bucket = int(np.bincount(flat).max())

    def _keys(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.cell).astype(np.int64)

    def _flat(self, keys: np.ndarray) -> np.ndarray:
        return (keys[:, 0] * self.shape[1] + keys[:, 1]) * self.shape[2] + keys[:, 2]

    def nearest(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Index of and distance to the nearest stored point, per query."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        best_i = np.full(len(queries), -1, dtype=np.int64)
        best_d = np.full(len(queries), np.inf)
        keys = self._keys(queries)
        last = len(self._order) - 1
        for off in self._OFFSETS:
            k = keys + off
            inside = np.all((k >= 0) & (k < self.shape), axis=1)
            flat = self._flat(np.where(inside[:, None], k, 0))
            lo = np.searchsorted(self._sorted, flat, side="left")
            hi = np.where(inside, np.searchsorted(self._sorted, flat, side="right"), lo)
            for b in range(self._max_bucket):
                ok = lo + b < hi
                if not ok.any():
                    break
                cand = self._order[np.minimum(lo + b, last)]
                d = np.linalg.norm(self.points[cand] - queries, axis=1)
                better = ok & (d < best_d)
                best_d[better] = d[better]
                best_i[better] = cand[better]

        for n in np.flatnonzero(best_d > self.cell):
            d = np.linalg.norm(self.points - queries[n], axis=1)
            best_i[n] = int(np.argmin(d))
            best_d[n] = d[best_i[n]]
        return best_i, best_d


# -----------------------------
# Closest points on the reference surface
# -----------------------------
def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Row-wise closest point to p[i] on triangle (a[i], b[i], c[i]), by Voronoi region."""
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        out = a + ab * (vb / denom)[:, None] + ac * (vc / denom)[:, None]
        # later regions take precedence
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        s = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[m] = b[m] + s[m, None] * (c - b)[m]
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        s = d2 / (d2 - d6)
        out[m] = a[m] + s[m, None] * ac[m]
        m = (d6 >= 0) & (d5 <= d6)
        out[m] = c[m]
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        s = d1 / (d1 - d3)
        out[m] = a[m] + s[m, None] * ab[m]
    m = (d3 >= 0) & (d4 <= d3)
    out[m] = b[m]
    m = (d1 <= 0) & (d2 <= 0)
    out[m] = a[m]
    return out


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", u, v)


@dataclass
class SurfaceMatch:
    points: np.ndarray
    faces: np.ndarray
    distances: np.ndarray

    @property
    def rms(self) -> float:
        return _rms(self.distances)


class SurfaceLocator:
    """
    Closest points on a triangle mesh. The nearest vertex comes from a
    UniformGrid; the answer is the best point over the triangles around it,
    plus an optional hint face per query (the previous match).
    """

    def __init__(self, mesh: TriMesh, cell: float) -> None:
        self.mesh = mesh
        self.grid = UniformGrid(mesh.vertices, cell)
        self._corners = mesh.vertices[mesh.faces]

    def closest(self, queries: np.ndarray, hint: Optional[np.ndarray] = None) -> SurfaceMatch:
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        nn, _ = self.grid.nearest(queries)
        candidates = self.mesh.vertex_faces[nn]
        if hint is not None:
            candidates = np.column_stack([candidates, hint])

        best_p = np.empty_like(queries)
        best_f = np.full(len(queries), -1, dtype=np.int64)
        best_d = np.full(len(queries), np.inf)
        for face in candidates.T:
            ok = face >= 0
            tri = self._corners[np.where(ok, face, 0)]
            p = closest_points_on_triangles(queries, tri[:, 0], tri[:, 1], tri[:, 2])
            d = np.linalg.norm(p - queries, axis=1)
            better = ok & (d < best_d)
            best_p[better] = p[better]
            best_f[better] = face[better]
            best_d[better] = d[better]
        return SurfaceMatch(best_p, best_f, best_d)


# -----------------------------
# ICP
# -----------------------------
def best_rigid_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares R, t with R src + t ~ dst (Kabsch, reflection corrected)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateConfigurationError("cross-covariance has rank < 2 (points are collinear or coincident)")
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def icp_align(
    source: TriMesh,
    reference: TriMesh,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> IcpResult:
    """
    Point-to-point ICP of source vertices onto the reference surface.

    The source centroid is first moved onto the reference centroid. Each
    iteration pairs every source vertex with its closest point on the reference
    triangles and solves the rigid fit. When two successive updates point the
    same way, the update is extrapolated toward the estimated zero of the RMS
    and kept only if it lowers the RMS further. Stops when the RMS changes by
    less than ``tol`` or after ``max_iters``.
    """
    cell = 2.0 * float(reference.edge_lengths().mean())
    locator = SurfaceLocator(reference, cell)
    src = source.vertices

    current = RigidTransform(np.eye(3), reference.vertices.mean(axis=0) - src.mean(axis=0))
    match = locator.closest(current.apply(src))
    history = [match.rms]
    iterations = 0
    last_step: Optional[np.ndarray] = None
    for _ in range(max_iters):
        candidate = best_rigid_transform(current.apply(src), match.points).compose(current)
        trial = locator.closest(candidate.apply(src), hint=match.faces)
        # non-increasing in exact arithmetic; roundoff can break a tie upwards
        if trial.rms > history[-1]:
            break

        step = _pose_vector(candidate) - _pose_vector(current)
        if last_step is not None and _turn_deg(step, last_step) < EXTRAPOLATE_MAX_TURN_DEG and trial.rms < history[-1]:
            norm = float(np.linalg.norm(step))
            reach = min(trial.rms * norm / (history[-1] - trial.rms), EXTRAPOLATE_MAX_REACH * norm)
            jump = _from_pose_vector(_pose_vector(candidate) + reach * step / norm)
            jumped = locator.closest(jump.apply(src), hint=trial.faces)
            if jumped.rms < trial.rms:
                logger.debug("ICP extrapolated %.3g along the last update", reach)
                candidate, trial, step = jump, jumped, None

        current, match, last_step = candidate, trial, step
        history.append(match.rms)
        iterations += 1
        if history[-2] - history[-1] < tol:
            break
    logger.info("ICP finished after %d iterations, RMS %.4g", iterations, history[-1])
    return IcpResult(current, history[-1], history, iterations)


def _pose_vector(t: RigidTransform) -> np.ndarray:
    return np.r_[Rotation.from_matrix(t.rotation).as_rotvec(), t.translation]


def _from_pose_vector(x: np.ndarray) -> RigidTransform:
    return RigidTransform(Rotation.from_rotvec(x[:3]).as_matrix(), x[3:])


def _turn_deg(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 180.0
    return float(np.degrees(np.arccos(np.clip(u @ v / (nu * nv), -1.0, 1.0))))


def _rms(d: np.ndarray) -> float:
    return float(np.sqrt(np.mean(d * d)))


def apply_transform(mesh: TriMesh, transform: RigidTransform) -> TriMesh:
    return mesh.with_vertices(transform.apply(mesh.vertices))

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from geometry.errors import DegenerateFaceError, MaxItersExceeded, MetricCollapseError
from geometry.measures import _half_angle, areas_from_lengths, face_corner_lengths
from ingestion.mesh import TriMesh

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-6
DEFAULT_STEP = 0.05
DEFAULT_MAX_ITERS = {"gradient": 50_000, "newton": 100}
MAX_HALVINGS = 40


class FlowMode(str, Enum):
    GRADIENT = "gradient"
    NEWTON = "newton"


class RadiusRule(str, Enum):
    """Which incident face sets a vertex radius from its half-perimeter excess."""

    MIN = "min"
    MAX = "max"


@dataclass(frozen=True, eq=False)
class CirclePackingMetric:
    """
    Per-vertex log radii u and per-edge cosines of the intersection angle.

    ``edge_cosines`` holds cos(phi). Unclamped initialisation can leave values
    above 1 (disjoint circles); ``clamped`` marks edges whose cosine was pulled
    into [0, 1] at initialisation.
    """

    log_radii: np.ndarray
    edges: np.ndarray
    edge_cosines: np.ndarray
    clamped: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        u = np.array(self.log_radii, dtype=np.float64)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        eta = np.array(self.edge_cosines, dtype=np.float64)
        clamped = np.zeros(len(edges), dtype=bool) if self.clamped is None else np.array(self.clamped, dtype=bool)
        if u.ndim != 1 or not np.all(np.isfinite(u)):
            raise ValueError("log radii must be a finite vector")
        if eta.shape != (len(edges),) or clamped.shape != (len(edges),):
            raise ValueError("one cosine and one clamp flag per edge")
        if not np.all(np.isfinite(eta)) or np.any(eta < -1.0):
            raise ValueError("edge cosines must be finite and at least -1")
        if edges.size and (edges.min() < 0 or edges.max() >= len(u)):
            raise ValueError("edge references a vertex without a radius")
        for arr in (u, edges, eta, clamped):
            arr.setflags(write=False)
        object.__setattr__(self, "log_radii", u)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_cosines", eta)
        object.__setattr__(self, "clamped", clamped)

    @classmethod
    def from_weights(cls, radii, edges, weights) -> "CirclePackingMetric":
        """Build from radii and intersection angles phi in radians."""
        return cls(np.log(np.asarray(radii, dtype=np.float64)), edges, np.cos(np.asarray(weights, dtype=np.float64)))

    @property
    def radii(self) -> np.ndarray:
        return np.exp(self.log_radii)

    @property
    def edge_weights(self) -> np.ndarray:
        """phi per edge; disjoint-circle edges (cosine above 1) report 0."""
        return np.arccos(np.clip(self.edge_cosines, -1.0, 1.0))

    @property
    def n_clamped(self) -> int:
        return int(np.count_nonzero(self.clamped))

    @property
    def n_disjoint(self) -> int:
        return int(np.count_nonzero(self.edge_cosines > 1.0))

    def with_log_radii(self, log_radii: np.ndarray) -> "CirclePackingMetric":
        return CirclePackingMetric(log_radii, self.edges, self.edge_cosines, self.clamped)


@dataclass
class FlowReport:
    iterations: int
    max_residual_history: List[float]
    energy_history: List[float]
    converged: bool
    mode: FlowMode
    epsilon: float
    step_halvings: int = 0
    interior_mean_log_radius: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.max_residual_history[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "mode": self.mode.value,
            "epsilon": self.epsilon,
            "final_residual": self.final_residual,
            "step_halvings": self.step_halvings,
            "interior_mean_log_radius": self.interior_mean_log_radius,
            "max_residual_history": list(self.max_residual_history),
            "energy_history": list(self.energy_history),
            **self.extra,
        }


# -----------------------------
# Metric construction
# -----------------------------
def init_circle_packing(
    mesh: TriMesh,
    clamp: bool = False,
    radius_rule: RadiusRule = RadiusRule.MIN,
) -> CirclePackingMetric:
    """
    Radius of v_i is the min (or max) over incident faces f_ijk of
    (l_ij + l_ki - l_jk) / 2; edge cosines invert the cosine law so the induced
    lengths reproduce the mesh edges. With ``clamp`` the cosines are pulled into
    [0, 1] and the affected edges are flagged.
    """
    radius_rule = RadiusRule(radius_rule)
    corner = face_corner_lengths(mesh)
    excess = 0.5 * corner.sum(axis=1)[:, None] - corner
    bad = np.flatnonzero(np.any(excess <= 0, axis=1))
    if bad.size:
        f = int(bad[0])
        raise DegenerateFaceError(f"face {f} yields a non-positive circle radius", face=f)

    if radius_rule is RadiusRule.MIN:
        radii = np.full(mesh.n_vertices, np.inf)
        np.minimum.at(radii, mesh.faces.ravel(), excess.ravel())
    else:
        radii = np.zeros(mesh.n_vertices)
        np.maximum.at(radii, mesh.faces.ravel(), excess.ravel())

    lengths = mesh.edge_lengths()
    gi, gj = radii[mesh.edges[:, 0]], radii[mesh.edges[:, 1]]
    eta = (lengths**2 - gi**2 - gj**2) / (2.0 * gi * gj)
    clamped = np.zeros(len(eta), dtype=bool)
    if clamp:
        clamped = (eta < 0.0) | (eta > 1.0)
        eta = np.clip(eta, 0.0, 1.0)
        if clamped.any():
            logger.warning("Clamped %d of %d edge weights into [0, pi/2]", clamped.sum(), len(eta))
    else:
        n_out = int(np.count_nonzero((eta < 0.0) | (eta > 1.0)))
        if n_out:
            logger.debug("%d of %d edges keep cos(phi) outside [0, 1]", n_out, len(eta))
    return CirclePackingMetric(np.log(radii), mesh.edges, eta, clamped)


def edge_lengths(metric: CirclePackingMetric) -> np.ndarray:
    """l^2 = g_i^2 + g_j^2 + 2 g_i g_j cos(phi_ij)."""
    g = metric.radii
    gi, gj = g[metric.edges[:, 0]], g[metric.edges[:, 1]]
    return np.sqrt(gi**2 + gj**2 + 2.0 * gi * gj * metric.edge_cosines)


class _CurvatureModel:
    """Curvature and its Jacobian as functions of the log radii, for a fixed mesh and weights."""

    def __init__(self, mesh: TriMesh, metric: CirclePackingMetric) -> None:
        if len(metric.log_radii) != mesh.n_vertices or len(metric.edges) != len(mesh.edges):
            raise ValueError("metric does not belong to this mesh")
        self.mesh = mesh
        self.ei, self.ej = metric.edges[:, 0], metric.edges[:, 1]
        self.eta = metric.edge_cosines
        self.total = np.where(mesh.boundary_flags, np.pi, 2.0 * np.pi)

    def lengths(self, u: np.ndarray) -> np.ndarray:
        g = np.exp(u)
        gi, gj = g[self.ei], g[self.ej]
        return np.sqrt(np.clip(gi**2 + gj**2 + 2.0 * gi * gj * self.eta, 0.0, None))

    def angles(self, u: np.ndarray) -> Optional[np.ndarray]:
        corner = self.lengths(u)[self.mesh.face_edges]
        s = 0.5 * corner.sum(axis=1)
        sa, sb, sc = s - corner[:, 0], s - corner[:, 1], s - corner[:, 2]
        if not np.all((sa > 0) & (sb > 0) & (sc > 0)):
            return None
        return _half_angle(s, sa, sb, sc)

    def curvature(self, u: np.ndarray) -> Optional[np.ndarray]:
        theta = self.angles(u)
        if theta is None:
            return None
        summed = np.bincount(self.mesh.faces.ravel(), weights=theta.ravel(), minlength=self.mesh.n_vertices)
        return self.total - summed

    def jacobian(self, u: np.ndarray) -> sparse.csr_matrix:
        """dK/du, symmetric positive semi-definite (the Ricci energy Hessian)."""
        faces = self.mesh.faces
        n_f = len(faces)
        g = np.exp(u)
        corner = self.lengths(u)[self.mesh.face_edges]
        theta = self.angles(u)
        if theta is None:
            raise MetricCollapseError("Hessian requested at a metric violating a triangle inequality")
        area = areas_from_lengths(corner)

        # d theta_c / d L_m
        base = corner / (2.0 * area[:, None])
        dth_dl = np.empty((n_f, 3, 3))
        for c in range(3):
            for m in range(3):
                if m == c:
                    dth_dl[:, c, m] = base[:, c]
                else:
                    dth_dl[:, c, m] = -base[:, c] * np.cos(theta[:, 3 - c - m])

        # d L_m / d u at the two corners bounding edge m
        gf = g[faces]
        eta_f = self.eta[self.mesh.face_edges]
        dl_du = np.zeros((n_f, 3, 3))
        for m in range(3):
            a, b = (m + 1) % 3, (m + 2) % 3
            cross = gf[:, a] * gf[:, b] * eta_f[:, m]
            dl_du[:, m, a] = (gf[:, a] ** 2 + cross) / corner[:, m]
            dl_du[:, m, b] = (gf[:, b] ** 2 + cross) / corner[:, m]

        dth_du = np.einsum("fcm,fmd->fcd", dth_dl, dl_du)
        rows = np.repeat(faces[:, :, None], 3, axis=2)
        cols = np.repeat(faces[:, None, :], 3, axis=1)
        n = self.mesh.n_vertices
        jac = sparse.coo_matrix((-dth_du.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
        return 0.5 * (jac + jac.T)

    def segment_energy(
        self, u0: np.ndarray, du: np.ndarray, targets: np.ndarray, nodes: int = 3, segments: int = 1
    ) -> Optional[float]:
        """Integral of (K - K_target) . du along u0 + t du, t in [0, 1]."""
        x, w = np.polynomial.legendre.leggauss(nodes)
        total = 0.0
        for s in range(segments):
            for xq, wq in zip(x, w):
                t = (s + 0.5 * (xq + 1.0)) / segments
                k = self.curvature(u0 + t * du)
                if k is None:
                    return None
                total += 0.5 * wq / segments * float(np.dot(k - targets, du))
        return total


def metric_curvature(mesh: TriMesh, metric: CirclePackingMetric) -> np.ndarray:
    """Angle-deficit curvature of the lengths induced by the metric."""
    k = _CurvatureModel(mesh, metric).curvature(metric.log_radii)
    if k is None:
        corner = edge_lengths(metric)[mesh.face_edges]
        s = 0.5 * corner.sum(axis=1)
        f = int(np.flatnonzero(np.any(s[:, None] - corner <= 0, axis=1))[0])
        raise DegenerateFaceError(f"face {f} violates the triangle inequality under this metric", face=f)
    return k


def curvature_jacobian(mesh: TriMesh, metric: CirclePackingMetric) -> sparse.csr_matrix:
    return _CurvatureModel(mesh, metric).jacobian(metric.log_radii)


def ricci_energy(
    mesh: TriMesh,
    metric: CirclePackingMetric,
    targets: Optional[np.ndarray] = None,
    base: Optional[CirclePackingMetric] = None,
    nodes: int = 8,
) -> float:
    """
    Ricci energy, the path integral of sum_i (K_i - target_i) du_i from ``base``
    (default: all log radii zero, same weights) to ``metric``. The form is closed,
    so the straight path is used; its gradient in u is K - target.
    """
    model = _CurvatureModel(mesh, metric)
    targets = np.zeros(mesh.n_vertices) if targets is None else np.asarray(targets, dtype=np.float64)
    u0 = np.zeros(mesh.n_vertices) if base is None else np.asarray(base.log_radii, dtype=np.float64)
    du = metric.log_radii - u0
    segments = max(1, int(np.ceil(np.abs(du).max(initial=0.0) / 0.25)))
    value = model.segment_energy(u0, du, targets, nodes=nodes, segments=segments)
    if value is None:
        raise MetricCollapseError("integration path leaves the valid metric region")
    return value


# -----------------------------
# Flow
# -----------------------------
def ricci_flow(
    mesh: TriMesh,
    metric: CirclePackingMetric,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: Optional[int] = None,
    mode: FlowMode = FlowMode.NEWTON,
    step: float = DEFAULT_STEP,
) -> Tuple[CirclePackingMetric, FlowReport]:
    """
    Free-boundary flow: drives interior curvature to zero while boundary log radii
    stay fixed. GRADIENT takes explicit steps u <- u - step * K on the interior,
    NEWTON solves the interior block of the energy Hessian. Both halve a step that
    breaks a triangle inequality or raises the energy.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mode = FlowMode(mode)
    if max_iters is None:
        max_iters = DEFAULT_MAX_ITERS[mode.value]

    model = _CurvatureModel(mesh, metric)
    interior = mesh.interior
    targets = np.zeros(mesh.n_vertices)
    u = metric.log_radii.copy()
    k = model.curvature(u)
    if k is None:
        raise MetricCollapseError("initial metric violates a triangle inequality")

    residuals = [_residual(k, interior)]
    energies = [0.0]
    halvings = 0
    it = 0
    while residuals[-1] >= epsilon:
        if it >= max_iters:
            report = _report(residuals, energies, False, mode, epsilon, halvings, u, interior)
            raise MaxItersExceeded(
                f"flow stopped after {it} iterations with residual {residuals[-1]:.3e}",
                metric=metric.with_log_radii(u),
                report=report,
            )
        g = k[interior]
        if mode is FlowMode.NEWTON:
            direction, t = _newton_direction(model, u, interior, g), 1.0
        else:
            direction, t = -g, step

        for _ in range(MAX_HALVINGS):
            du = np.zeros_like(u)
            du[interior] = t * direction
            k_new = model.curvature(u + du)
            de = None if k_new is None else model.segment_energy(u, du, targets)
            if de is not None and de <= 0.0:
                break
            t *= 0.5
            halvings += 1
        else:
            raise MetricCollapseError(
                f"step halving could not keep the metric valid and the energy decreasing at iteration {it}"
            )

        u = u + du
        k = k_new
        it += 1
        residuals.append(_residual(k, interior))
        energies.append(energies[-1] + de)
        if mode is FlowMode.NEWTON or it % 100 == 0:
            logger.debug("iter %d residual %.3e energy %.6e", it, residuals[-1], energies[-1])

    report = _report(residuals, energies, True, mode, epsilon, halvings, u, interior)
    logger.info("Ricci flow (%s) converged in %d iterations, residual %.2e", mode.value, it, residuals[-1])
    return metric.with_log_radii(u), report


def _residual(k: np.ndarray, interior: np.ndarray) -> float:
    return float(np.abs(k[interior]).max(initial=0.0))


def _newton_direction(model: _CurvatureModel, u: np.ndarray, interior: np.ndarray, g: np.ndarray) -> np.ndarray:
    hess = model.jacobian(u)[interior][:, interior].tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            direction = np.atleast_1d(spsolve(hess, -g))
        except MatrixRankWarning:
            direction = None
    if direction is None or not np.all(np.isfinite(direction)) or np.dot(direction, g) >= 0:
        logger.debug("Newton system unusable; falling back to the gradient direction")
        return -g
    return direction


def _report(residuals, energies, converged, mode, epsilon, halvings, u, interior) -> FlowReport:
    return FlowReport(
        iterations=len(residuals) - 1,
        max_residual_history=list(residuals),
        energy_history=list(energies),
        converged=converged,
        mode=mode,
        epsilon=epsilon,
        step_halvings=halvings,
        interior_mean_log_radius=float(u[interior].mean()) if interior.size else 0.0,
    )

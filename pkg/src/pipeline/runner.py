from __future__ import annotations

import glob
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app_helpers.utils import atomic_write_bytes, write_json
from geometry.errors import ConfigError, DimensionMismatchError, FaceFlatError, MaxItersExceeded
from geometry.layout import PlanarEmbedding, Projection, layout, orthographic, save_embedding_obj
from geometry.measures import (
    DistortionStats,
    VertexScalars,
    VertexVectors,
    conformal_factors,
    qc_distortion,
    vertex_normals,
    weighted_curvature,
)
from geometry.registration import IcpResult, apply_transform, icp_align
from geometry.ricci import CirclePackingMetric, FlowReport, init_circle_packing, ricci_flow
from imaging.channels import CHANNELS, ChannelImage, assemble_channels, rasterize
from imaging.mci import write_mci
from ingestion.depth import load_depth, mesh_from_depth
from ingestion.mesh import TriMesh
from ingestion.readers import load_mesh
from pipeline.config import InputKind, PipelineConfig

logger = logging.getLogger(__name__)


@dataclass
class FlattenResult:
    mesh: TriMesh
    embedding: PlanarEmbedding
    table: pd.DataFrame
    image: ChannelImage
    distortion: DistortionStats
    normals: VertexVectors
    curvature: VertexScalars
    factors: Optional[VertexScalars] = None
    metric: Optional[CirclePackingMetric] = None
    flow: Optional[FlowReport] = None
    alignment: Optional[IcpResult] = None

    def stats(self, name: str) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "input": name,
            "projection": self.embedding.source.value,
            "vertices": self.mesh.n_vertices,
            "faces": self.mesh.n_faces,
            "size": [self.image.width, self.image.height],
            "mask_pixels": int(self.image.mask.sum()),
            "distortion": self.distortion.summary(),
            "flip_count": self.embedding.flip_count(self.mesh),
            "normalization": {ch: self.image.normalization[k].tolist() for k, ch in enumerate(CHANNELS)},
        }
        if self.embedding.source is Projection.CONFORMAL:
            out["layout"] = {
                "seed_face": self.embedding.seed_face,
                "max_edge_residual": self.embedding.max_edge_residual,
            }
        if self.flow is not None:
            out["flow"] = {
                "mode": self.flow.mode.value,
                "iterations": self.flow.iterations,
                "converged": self.flow.converged,
                "final_residual": self.flow.final_residual,
            }
        if self.metric is not None:
            out["metric"] = {"clamped_edges": self.metric.n_clamped, "disjoint_edges": self.metric.n_disjoint}
        if self.alignment is not None:
            out["alignment"] = {
                **self.alignment.transform.to_dict(),
                "rms": self.alignment.rms,
                "iterations": self.alignment.iterations,
            }
        return out


@dataclass
class InputOutcome:
    input: str
    ok: bool
    outputs: List[str] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class BatchSummary:
    outcomes: List[InputOutcome]
    out_dir: Path
    command: str = "flatten"

    @property
    def failed(self) -> List[InputOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def line(self) -> str:
        n = len(self.outcomes)
        return f"{self.command}: {n} inputs, {n - len(self.failed)} ok, {len(self.failed)} failed -> {self.out_dir}"


# -----------------------------
# Inputs
# -----------------------------
def resolve_inputs(patterns: Sequence[str]) -> List[Path]:
    """Expands globs (``**`` allowed); order is sorted per pattern, duplicates dropped."""
    seen: Dict[str, None] = {}
    for pattern in patterns:
        for match in sorted(glob.glob(str(pattern), recursive=True)):
            if Path(match).is_file():
                seen.setdefault(str(Path(match)), None)
    if not seen:
        raise ConfigError("no inputs matched")
    return [Path(p) for p in seen]


def load_input(path: Path, cfg: PipelineConfig) -> TriMesh:
    if cfg.kind is InputKind.DEPTH:
        return mesh_from_depth(load_depth(path, spacing=cfg.spacing, depth_scale=cfg.depth_scale))
    return load_mesh(path)


@lru_cache(maxsize=4)
def _load_reference(path: str) -> TriMesh:
    return load_mesh(path)


def reference_mesh(cfg: PipelineConfig) -> Optional[TriMesh]:
    if cfg.no_align or cfg.reference is None:
        return None
    return _load_reference(str(cfg.reference))


# -----------------------------
# Per-mesh pipeline
# -----------------------------
def align(mesh: TriMesh, reference: Optional[TriMesh], cfg: PipelineConfig) -> Tuple[TriMesh, Optional[IcpResult]]:
    if reference is None:
        return mesh, None
    result = icp_align(mesh, reference, max_iters=cfg.icp_max_iters, tol=cfg.icp_tol)
    return apply_transform(mesh, result.transform), result


def conformal_embedding(mesh: TriMesh, cfg: PipelineConfig) -> Tuple[PlanarEmbedding, CirclePackingMetric, FlowReport]:
    metric = init_circle_packing(mesh, clamp=cfg.clamp_weights, radius_rule=cfg.radius_rule)
    flat, report = ricci_flow(
        mesh, metric, epsilon=cfg.epsilon, max_iters=cfg.max_iters, mode=cfg.mode, step=cfg.step
    )
    report.extra.update({"clamped_edges": metric.n_clamped, "disjoint_edges": metric.n_disjoint})
    return layout(mesh, flat, epsilon=cfg.epsilon), flat, report


def flatten_mesh(mesh: TriMesh, cfg: PipelineConfig, reference: Optional[TriMesh] = None) -> FlattenResult:
    """Alignment, vertex quantities, embedding, channel table and raster for one mesh."""
    mesh, alignment = align(mesh, reference, cfg)
    normals = vertex_normals(mesh)
    curvature = weighted_curvature(mesh, prefactor=cfg.curvature_prefactor)

    metric = report = factors = None
    if cfg.projection is Projection.CONFORMAL:
        embedding, metric, report = conformal_embedding(mesh, cfg)
        factors = conformal_factors(mesh, embedding)
        distortion = qc_distortion(mesh, embedding)
    else:
        embedding = orthographic(mesh)
        distortion = qc_distortion(mesh, embedding, allow_flips=True)
        if distortion.flipped or distortion.degenerate:
            logger.warning(
                "Orthographic projection flips %d and collapses %d faces", distortion.flipped, distortion.degenerate
            )

    table = assemble_channels(mesh, embedding, normals, curvature, factors)
    image = rasterize(table, embedding, mesh, cfg.width, cfg.height)
    return FlattenResult(mesh, embedding, table, image, distortion, normals, curvature, factors, metric, report, alignment)


def flatten_file(path: Path, cfg: PipelineConfig) -> InputOutcome:
    """Runs one input and writes its outputs; failures are logged and returned, never raised."""
    path = Path(path)
    out_dir = Path(cfg.out)
    stem = path.stem
    outputs: List[str] = []
    try:
        mesh = load_input(path, cfg)
        logger.info("Loaded %s: %s", path, mesh)
        result = flatten_mesh(mesh, cfg, reference_mesh(cfg))
        outputs.append(str(write_mci(result.image, out_dir / f"{stem}.mci")))
        if result.flow is not None:
            outputs.append(str(write_json(out_dir / f"{stem}.flow.json", result.flow.to_dict())))
        outputs.append(str(write_json(out_dir / f"{stem}.stats.json", result.stats(path.name))))
        if cfg.export_vertex_csv:
            csv = result.table.to_csv(index=True).encode("utf-8")
            outputs.append(str(atomic_write_bytes(out_dir / f"{stem}.vertices.csv", csv)))
        if cfg.export_embedding:
            outputs.append(str(save_embedding_obj(out_dir / f"{stem}.flat.obj", result.mesh, result.embedding)))
        if cfg.export_quantities:
            outputs.append(str(result.curvature.to_csv(out_dir / f"{stem}.curvature.csv")))
            outputs.append(str(result.normals.to_csv(out_dir / f"{stem}.normals.csv")))
            if result.factors is not None:
                outputs.append(str(result.factors.to_csv(out_dir / f"{stem}.conformal_factors.csv")))
        logger.info("Wrote %s (mean distortion %.4f)", outputs[0], result.distortion.mean)
        return InputOutcome(str(path), True, outputs)
    except MaxItersExceeded as exc:
        if exc.report is not None:
            outputs.append(str(write_json(out_dir / f"{stem}.flow.json", exc.report.to_dict())))
        logger.error("%s: %s", path, exc)
        return InputOutcome(str(path), False, outputs, str(exc))
    except (FaceFlatError, OSError) as exc:
        logger.error("%s: %s", path, exc)
        return InputOutcome(str(path), False, outputs, str(exc))
    except Exception as exc:  # noqa: BLE001
        logger.exception("%s: unexpected failure", path)
        return InputOutcome(str(path), False, outputs, f"{type(exc).__name__}: {exc}")


def _flatten_task(args: Tuple[str, PipelineConfig]) -> InputOutcome:
    path, cfg = args
    return flatten_file(Path(path), cfg)


def _compare_task(args: Tuple[str, PipelineConfig]) -> InputOutcome:
    path, cfg = args
    return compare_file(Path(path), cfg)


def _run(cfg: PipelineConfig, task: Callable[[Tuple[str, PipelineConfig]], InputOutcome], command: str) -> BatchSummary:
    paths = resolve_inputs(cfg.inputs)
    logger.info("Running %s on %d inputs with %d job(s)", command, len(paths), cfg.jobs)
    tasks = [(str(p), cfg) for p in paths]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(task, tasks))
    else:
        outcomes = [task(t) for t in tasks]
    return BatchSummary(outcomes, Path(cfg.out), command)


def run_batch(cfg: PipelineConfig) -> BatchSummary:
    return _run(cfg, _flatten_task, "flatten")


def run_compare(cfg: PipelineConfig) -> BatchSummary:
    return _run(cfg, _compare_task, "compare")


# -----------------------------
# Comparison
# -----------------------------
def compare_mesh(mesh: TriMesh, cfg: PipelineConfig, reference: Optional[TriMesh] = None) -> Dict[str, Any]:
    """Distortion of the conformal layout against the orthographic projection of one mesh."""
    conformal, _, report = conformal_embedding(mesh, cfg)
    conf = qc_distortion(mesh, conformal)
    aligned, alignment = align(mesh, reference, cfg)
    ortho = qc_distortion(aligned, orthographic(aligned), allow_flips=True)
    ratio = conf.mean / ortho.mean if np.isfinite(ortho.mean) and ortho.mean > 0 else float("nan")
    out = {
        "vertices": mesh.n_vertices,
        "faces": mesh.n_faces,
        "conformal": {**conf.summary(), "flow_iterations": report.iterations},
        "orthographic": {**ortho.summary(), "aligned": alignment is not None},
        "ratio": ratio,
    }
    logger.info("Conformal mean %.4f vs orthographic mean %.4f", conf.mean, ortho.mean)
    return out


def compare_file(path: Path, cfg: PipelineConfig) -> InputOutcome:
    """Compares one input and writes ``<stem>.compare.json``; failures are logged and returned."""
    path = Path(path)
    try:
        report = compare_mesh(load_input(path, cfg), cfg, reference_mesh(cfg))
        out = write_json(Path(cfg.out) / f"{path.stem}.compare.json", {"input": path.name, **report})
        logger.info("%s: ratio %.4f -> %s", path.name, report["ratio"], out)
        return InputOutcome(str(path), True, [str(out)])
    except (FaceFlatError, OSError) as exc:
        logger.error("%s: %s", path, exc)
        return InputOutcome(str(path), False, [], str(exc))
    except Exception as exc:  # noqa: BLE001
        logger.exception("%s: unexpected failure", path)
        return InputOutcome(str(path), False, [], f"{type(exc).__name__}: {exc}")


def compare_images(a: ChannelImage, b: ChannelImage) -> Dict[str, Any]:
    """Per-channel mean absolute difference over all pixels and the IoU of the masks."""
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    diff = np.abs(a.data.astype(np.float64) - b.data.astype(np.float64))
    union = np.logical_or(a.mask, b.mask).sum()
    inter = np.logical_and(a.mask, b.mask).sum()
    return {
        "size": [a.width, a.height],
        "mean_abs_diff": {ch: float(diff[k].mean()) for k, ch in enumerate(CHANNELS)},
        "mask_iou": float(inter / union) if union else 1.0,
    }

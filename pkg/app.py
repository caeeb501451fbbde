from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# --- Make sure our local src/ is importable when running `python app.py`
SRC = Path(__file__).parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from app_helpers.report import build_pdf_report, summarize_stats, write_summary_csv  # type: ignore
from app_helpers.utils import write_json  # type: ignore
from data_sources.fixtures import write_fixtures  # type: ignore
from geometry.errors import ConfigError, FaceFlatError  # type: ignore
from geometry.registration import apply_transform, icp_align  # type: ignore
from imaging.channels import CHANNELS  # type: ignore
from imaging.mci import export_channel_pgm, export_color_ppm, read_mci  # type: ignore
from ingestion.readers import load_mesh, save_mesh  # type: ignore
from pipeline.config import build_config, parse_size  # type: ignore
from pipeline.runner import (  # type: ignore
    compare_images,
    resolve_inputs,
    run_batch,
    run_compare,
)

logger = logging.getLogger("faceflat")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


# -----------------------------
# Argument parsing
# -----------------------------
def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", action="append", default=None, help="file or glob; repeatable")
    p.add_argument("--kind", choices=["mesh", "depth"], default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--size", default=None, help="raster size WIDTHxHEIGHT (default 182x182)")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--mode", choices=["gradient", "newton"], default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--projection", choices=["conformal", "orthographic"], default=None)
    p.add_argument("--reference", default=None, help="ICP reference mesh")
    p.add_argument("--no-align", action="store_true", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--config", default=None, help="YAML config pack; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faceflat", description="Conformal flattening of 3D face scans into nine-channel images"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="write the deterministic fixture meshes")
    p.add_argument("--out", default="fixtures")
    p.add_argument("--format", choices=["obj", "ply"], default="obj")

    p = sub.add_parser("flatten", help="flatten meshes or depth grids into MCI images")
    _pipeline_flags(p)
    p.add_argument("--export-vertex-csv", action="store_true", default=None)
    p.add_argument("--export-embedding", action="store_true", default=None, help="write <stem>.flat.obj")
    p.add_argument(
        "--export-quantities", action="store_true", default=None, help="write per-vertex curvature, normals, factors"
    )

    p = sub.add_parser("compare", help="conformal vs orthographic distortion, or two MCI images")
    _pipeline_flags(p)
    p.add_argument("--images", nargs=2, metavar=("A", "B"), default=None)

    p = sub.add_parser("icp", help="rigidly align a scan to a reference")
    p.add_argument("--input", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--aligned-mesh", default=None, help="also write the aligned mesh here")

    p = sub.add_parser("stats", help="collect *.stats.json files into summary.csv")
    p.add_argument("--input", action="append", default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--pdf", action="store_true", help="also render summary.pdf")

    p = sub.add_parser("export-pgm", help="write channels of an MCI image as PGM/PPM")
    p.add_argument("--input", required=True)
    p.add_argument("--channel", default="all", help="index, name or 'all'")
    p.add_argument("--out", default="out")
    return parser


def _config(args: argparse.Namespace):
    size = parse_size(args.size) if args.size else (None, None)
    return build_config(
        args.config,
        inputs=args.input,
        kind=args.kind,
        out=args.out,
        width=size[0],
        height=size[1],
        epsilon=args.epsilon,
        mode=args.mode,
        max_iters=args.max_iters,
        projection=args.projection,
        reference=args.reference,
        no_align=args.no_align,
        jobs=args.jobs,
        export_vertex_csv=getattr(args, "export_vertex_csv", None),
        export_embedding=getattr(args, "export_embedding", None),
        export_quantities=getattr(args, "export_quantities", None),
    )


# -----------------------------
# Commands
# -----------------------------
def cmd_fixtures(args: argparse.Namespace) -> int:
    written = write_fixtures(Path(args.out), fmt=args.format)
    print(f"fixtures: {len(written)} files -> {args.out}")
    return EXIT_OK


def cmd_flatten(args: argparse.Namespace) -> int:
    summary = run_batch(_config(args))
    print(summary.line())
    return summary.exit_code


def cmd_compare(args: argparse.Namespace) -> int:
    out_dir = Path(args.out or "out")
    if args.images:
        a, b = (Path(p) for p in args.images)
        report = compare_images(read_mci(a), read_mci(b))
        write_json(out_dir / f"{a.stem}_vs_{b.stem}.compare.json", report)
        print(f"compare: mask IoU {report['mask_iou']:.4f}")
        return EXIT_OK

    summary = run_compare(_config(args))
    print(summary.line())
    return summary.exit_code


def cmd_icp(args: argparse.Namespace) -> int:
    source, reference = load_mesh(args.input), load_mesh(args.reference)
    result = icp_align(source, reference, max_iters=args.max_iters, tol=args.tol)
    out = write_json(Path(args.out) / f"{Path(args.input).stem}.icp.json", result.to_dict())
    if args.aligned_mesh:
        save_mesh(apply_transform(source, result.transform), args.aligned_mesh)
    print(f"icp: rms {result.rms:.6g} after {result.iterations} iterations -> {out}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    patterns = args.input or [str(Path(args.out) / "*.stats.json")]
    frame = summarize_stats(resolve_inputs(patterns))
    out_dir = Path(args.out)
    csv_path = write_summary_csv(frame, out_dir / "summary.csv")
    if args.pdf:
        build_pdf_report(out_dir / "summary.pdf", "Flattening summary", frame)
    print(f"stats: {len(frame)} inputs -> {csv_path}")
    return EXIT_OK


def cmd_export_pgm(args: argparse.Namespace) -> int:
    image = read_mci(args.input)
    stem = Path(args.input).stem
    out_dir = Path(args.out)
    if args.channel == "all":
        selected: List[str] = list(CHANNELS)
        export_color_ppm(image, out_dir / f"{stem}.rgb.ppm")
    else:
        selected = [CHANNELS[int(args.channel)] if args.channel.isdigit() else args.channel]
        if selected[0] not in CHANNELS:
            raise ConfigError(f"unknown channel {args.channel!r}; expected 0-8 or one of {', '.join(CHANNELS)}")
    for name in selected:
        export_channel_pgm(image, name, out_dir / f"{stem}.{name}.pgm")
    print(f"export-pgm: {len(selected)} channels -> {out_dir}")
    return EXIT_OK


COMMANDS = {
    "fixtures": cmd_fixtures,
    "flatten": cmd_flatten,
    "compare": cmd_compare,
    "icp": cmd_icp,
    "stats": cmd_stats,
    "export-pgm": cmd_export_pgm,
}


# -----------------------------
# Main
# -----------------------------
def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FaceFlatError, OSError, IndexError) as exc:
        logger.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Union

import pandas as pd
from reportlab.lib.pagesizes import A4
from reportlab.lib.units import cm
from reportlab.pdfgen import canvas

from app_helpers.utils import atomic_write_bytes, read_json

SUMMARY_COLUMNS = [
    "input",
    "projection",
    "vertices",
    "faces",
    "distortion.mean",
    "distortion.max",
    "distortion.flipped",
    "flow.iterations",
    "flow.final_residual",
    "layout.max_edge_residual",
]


def summarize_stats(paths: Iterable[Union[str, Path]]) -> pd.DataFrame:
    """One row per ``*.stats.json`` file, nested keys flattened with dots."""
    records: List[dict] = []
    for path in sorted(Path(p) for p in paths):
        record = read_json(path)
        record.setdefault("input", path.name.replace(".stats.json", ""))
        records.append(record)
    if not records:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    frame = pd.json_normalize(records, sep=".")
    leading = [c for c in SUMMARY_COLUMNS if c in frame.columns]
    return frame[leading + [c for c in frame.columns if c not in leading]]


def write_summary_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    return atomic_write_bytes(Path(path), frame.to_csv(index=False).encode("utf-8"))


def build_pdf_report(out_path: Path, title: str, frame: pd.DataFrame, notes: str = "") -> str:
    """Single-page batch summary: per-projection averages and a line per input."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    c = canvas.Canvas(str(out_path), pagesize=A4)
    width, height = A4

    # Header
    c.setFont("Helvetica-Bold", 16)
    c.drawString(2 * cm, height - 2.5 * cm, title)
    c.setFont("Helvetica", 10)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    c.drawString(2 * cm, height - 3.2 * cm, f"Generated (UTC): {stamp}")
    c.drawString(2 * cm, height - 3.8 * cm, f"Inputs: {len(frame)}")

    # Averages
    y = height - 5.0 * cm
    c.setFont("Helvetica-Bold", 12)
    c.drawString(2 * cm, y, "Mean distortion by projection")
    y -= 0.8 * cm
    c.setFont("Helvetica", 11)
    if "projection" in frame.columns and "distortion.mean" in frame.columns and len(frame):
        means = pd.to_numeric(frame["distortion.mean"], errors="coerce").groupby(frame["projection"]).mean()
        for projection, mean in means.items():
            c.drawString(2.5 * cm, y, f"{projection}: {_fmt(mean)}")
            y -= 0.6 * cm
    else:
        c.drawString(2.5 * cm, y, "(no statistics)")
        y -= 0.6 * cm

    # Per input
    y -= 0.4 * cm
    c.setFont("Helvetica-Bold", 12)
    c.drawString(2 * cm, y, "Inputs")
    y -= 0.7 * cm
    c.setFont("Helvetica", 9)
    for _, row in frame.iterrows():
        if y < 3.5 * cm:
            c.drawString(2.5 * cm, y, "...")
            break
        line = f"{row.get('input', '?')}  {row.get('projection', '?')}  mean {_fmt(row.get('distortion.mean'))}"
        if pd.notna(row.get("flow.iterations")):
            line += f"  flow iters {int(row['flow.iterations'])}"
        c.drawString(2.5 * cm, y, line)
        y -= 0.45 * cm

    if notes:
        textobj = c.beginText(2 * cm, 3.0 * cm)
        c.setFont("Helvetica-Oblique", 9)
        for line in notes.splitlines():
            textobj.textLine(line)
        c.drawText(textobj)

    c.showPage()
    c.save()
    return str(out_path)


def _fmt(value) -> str:
    return "n/a" if value is None or pd.isna(value) else f"{float(value):.4f}"

"""Human-facing report outputs: per-slice CSV, JSON with metadata, and an
SVG stacked-bar figure (SAT red, VAT green, muscle yellow)."""

from __future__ import annotations

import json
from decimal import Decimal
from pathlib import Path
from xml.etree import ElementTree as ET

from .quantify import CompositionReport

SAT_COLOR = "#d62728"
VAT_COLOR = "#2ca02c"
MUSCLE_COLOR = "#e6c700"

CSV_HEADER = "slice,sat_ml,vat_ml,muscle_ml"


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def emit_csv(report: CompositionReport, path) -> None:
    """One row per slice plus a final `total` row; 4 decimal places.

    The totals row is the decimal sum of the printed row values, so a
    re-parse of the file is internally consistent."""
    lines = [CSV_HEADER]
    tot = [Decimal(0), Decimal(0), Decimal(0)]
    for row in report.slices:
        cells = [_fmt(row.sat_ml), _fmt(row.vat_ml), _fmt(row.muscle_ml)]
        for i, cell in enumerate(cells):
            tot[i] += Decimal(cell)
        lines.append(f"{row.index},{cells[0]},{cells[1]},{cells[2]}")
    lines.append(f"total,{_fmt(tot[0])},{_fmt(tot[1])},{_fmt(tot[2])}")
    Path(path).write_text("\n".join(lines) + "\n")


def report_to_dict(report: CompositionReport) -> dict:
    return {
        "metadata": {
            "voxel_volume_ml": report.voxel_volume_ml,
            "spacing_mm": report.spacing.as_list(),
            **report.metadata,
        },
        "slices": [
            {
                "slice": r.index,
                "sat_ml": r.sat_ml,
                "vat_ml": r.vat_ml,
                "muscle_ml": r.muscle_ml,
                "sat_voxels": r.sat_voxels,
                "vat_voxels": r.vat_voxels,
                "muscle_voxels": r.muscle_voxels,
            }
            for r in report.slices
        ],
        "totals": {
            "sat_ml": report.total_sat_ml,
            "vat_ml": report.total_vat_ml,
            "muscle_ml": report.total_muscle_ml,
        },
    }


def emit_json(report: CompositionReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")


def emit_svg_stacked_bars(report: CompositionReport, path) -> None:
    """One bar stack per axial slice, three rectangles each, single linear
    scale; legend markers are circles so the rect count stays 3 per slice."""
    if not report.slices:
        raise ValueError("cannot plot an empty report")
    n = len(report.slices)
    bar_w, gap, margin, plot_h, legend_h = 10, 2, 40, 220, 30
    width = margin * 2 + n * (bar_w + gap)
    height = margin * 2 + plot_h + legend_h
    peak = max((r.sat_ml + r.vat_ml + r.muscle_ml) for r in report.slices)
    scale = plot_h / peak if peak > 0 else 0.0

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    base_y = margin + plot_h
    ET.SubElement(
        svg,
        "line",
        x1=str(margin),
        y1=str(base_y),
        x2=str(width - margin),
        y2=str(base_y),
        stroke="#333",
    )
    for i, row in enumerate(report.slices):
        g = ET.SubElement(svg, "g", attrib={"class": "slice", "data-slice": str(row.index)})
        x = margin + i * (bar_w + gap)
        y = base_y
        for value, color in (
            (row.sat_ml, SAT_COLOR),
            (row.vat_ml, VAT_COLOR),
            (row.muscle_ml, MUSCLE_COLOR),
        ):
            h = value * scale
            y -= h
            ET.SubElement(
                g,
                "rect",
                x=f"{x:.2f}",
                y=f"{y:.2f}",
                width=str(bar_w),
                height=f"{h:.2f}",
                fill=color,
            )
    legend = ET.SubElement(svg, "g", attrib={"class": "legend"})
    for i, (label, color) in enumerate(
        (("SAT", SAT_COLOR), ("VAT", VAT_COLOR), ("Muscle", MUSCLE_COLOR))
    ):
        cx = margin + 8 + i * 90
        cy = base_y + legend_h // 2 + 4
        ET.SubElement(legend, "circle", cx=str(cx), cy=str(cy), r="6", fill=color)
        t = ET.SubElement(legend, "text", x=str(cx + 12), y=str(cy + 4))
        t.set("font-family", "sans-serif")
        t.set("font-size", "12")
        t.text = label
    ET.ElementTree(svg).write(path, encoding="unicode", xml_declaration=False)


def emit_all(report: CompositionReport, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "report.csv",
        "json": out_dir / "report.json",
        "svg": out_dir / "report.svg",
    }
    emit_csv(report, paths["csv"])
    emit_json(report, paths["json"])
    emit_svg_stacked_bars(report, paths["svg"])
    return paths

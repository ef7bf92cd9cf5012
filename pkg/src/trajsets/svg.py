"""Deterministic SVG figures of corridors and selected trajectories.

The first planning cycle is drawn in light translucent colours, one per
aircraft; the latest re-planned corridors, when present, are overlaid in a
darker shade of the same hue.  The plot y axis points up.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional
from xml.sax.saxutils import escape

import numpy as np

from .model import InvalidInput
from .orchestrator import Session

PALETTE = [
    ("#e41a1c", "#7f0000"),
    ("#377eb8", "#08306b"),
    ("#4daf4a", "#00441b"),
    ("#984ea3", "#3f007d"),
    ("#ff7f00", "#7f2704"),
    ("#a65628", "#4d2600"),
]
LAYERS = ("corridors", "centers", "pilots", "replan")
WIDTH = 800.0
MARGIN = 20.0


def _f(v: float) -> str:
    out = f"{v:.3f}"
    return "0.000" if out == "-0.000" else out


def render_svg(record: Session, path: Optional[str | Path] = None, layers: Optional[Iterable[str]] = None) -> str:
    """Draw ``record`` and return the SVG text, also writing it to ``path``.

    ``layers`` selects among ``corridors`` (interior disks of the first
    cycle), ``centers`` (corridor centre polylines), ``pilots`` (current
    selections) and ``replan`` (disks of the latest cycle when it is a
    re-plan); all are drawn by default.
    """
    if not record.history:
        raise InvalidInput("run record has no planning cycle")
    layers = set(LAYERS if layers is None else layers)
    unknown = layers - set(LAYERS)
    if unknown:
        raise InvalidInput(f"unknown layers: {sorted(unknown)}")
    first = record.history[0]
    last = record.history[-1] if len(record.history) > 1 else None
    ids = [r.aircraft_id for r in record.scenario.aircraft]
    color = {aid: PALETTE[i % len(PALETTE)] for i, aid in enumerate(ids)}

    # world bounds over everything that may be drawn
    boxes = []
    for cyc in record.history:
        for c in cyc.atc.corridors:
            boxes.append(np.column_stack([c.centers - c.radii[:, None], c.centers + c.radii[:, None]]))
    for t in record.selections.values():
        boxes.append(np.hstack([t.positions, t.positions]))
    allb = np.vstack(boxes)
    xmin, ymin = allb[:, 0].min(), allb[:, 1].min()
    xmax, ymax = allb[:, 2].max(), allb[:, 3].max()
    span = max(xmax - xmin, ymax - ymin, 1e-9)
    scale = (WIDTH - 2 * MARGIN) / span
    height = (ymax - ymin) * scale + 2 * MARGIN

    def px(p):
        return MARGIN + (p[0] - xmin) * scale, MARGIN + (ymax - p[1]) * scale

    def polyline(points, stroke, cls, extra=""):
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in map(px, points))
        return f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{stroke}"{extra}/>'

    def disks(cycle, shade, cls, opacity):
        out = []
        for c in sorted(cycle.atc.corridors, key=lambda c: c.aircraft_id):
            fill = color[c.aircraft_id][shade]
            for k in c.interior_steps:
                cx, cy = px(c.center_at(k))
                out.append(
                    f'<circle class="{cls}" data-aircraft="{escape(c.aircraft_id)}" data-k="{k}" '
                    f'cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(c.radius_at(k) * scale)}" '
                    f'fill="{fill}" fill-opacity="{opacity}" stroke="{fill}" stroke-width="0.5"/>'
                )
        return out

    body = []
    if "corridors" in layers:
        body.append('<g id="corridors">')
        body += disks(first, 0, "disk", "0.25")
        body.append("</g>")
    if "replan" in layers and last is not None:
        body.append('<g id="replan">')
        body += disks(last, 1, "disk replan", "0.35")
        body.append("</g>")
    if "centers" in layers:
        body.append('<g id="centers">')
        for cyc, shade in ((first, 0),) + (((last, 1),) if last is not None and "replan" in layers else ()):
            for c in sorted(cyc.atc.corridors, key=lambda c: c.aircraft_id):
                body.append(polyline(c.centers, color[c.aircraft_id][shade], "center", ' stroke-width="1"'))
                for p in c.centers:
                    cx, cy = px(p)
                    body.append(f'<circle class="marker" cx="{_f(cx)}" cy="{_f(cy)}" r="1.5" fill="{color[c.aircraft_id][shade]}"/>')
        body.append("</g>")
    if "pilots" in layers:
        body.append('<g id="pilots">')
        for aid in sorted(record.selections):
            t = record.selections[aid]
            stroke = color.get(aid, PALETTE[0])[1]
            body.append(polyline(t.positions, stroke, "pilot", ' stroke-width="1.5" stroke-dasharray="4 2"'))
        body.append("</g>")

    legend = []
    for i, aid in enumerate(ids):
        y = MARGIN + 14 * i
        legend.append(f'<rect x="{_f(WIDTH - 120)}" y="{_f(y)}" width="10" height="10" fill="{color[aid][0]}"/>')
        legend.append(f'<text x="{_f(WIDTH - 105)}" y="{_f(y + 9)}" font-size="10">{escape(aid)}</text>')

    svg = "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(WIDTH)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(WIDTH)} {_f(height)}">',
            f'<rect width="{_f(WIDTH)}" height="{_f(height)}" fill="white"/>',
            *body,
            '<g id="legend">',
            *legend,
            "</g>",
            "</svg>",
            "",
        ]
    )
    if path is not None:
        Path(path).write_text(svg)
    return svg

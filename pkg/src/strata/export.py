"""SVG and polygon-JSON export of a built geometry."""
from __future__ import annotations

import dataclasses
import json
from xml.sax.saxutils import escape

import numpy as np

from .design_space import GeometryModel

SVG_SCALE = 10.0  # user units per mm (1 unit = 0.1 mm)
MARGIN_MM = 2.0
LAYERS = {
    "ground": ("#9e9e9e", "ground plane (region below the spline profile)"),
    "extension": ("#616161", "L-shaped ground extension (l1 x w1 strip + w1 x l2 arm)"),
    "feed": ("#ef6c00", "microstrip feed, w_f = 1.8 mm"),
    "radiator": ("#c62828", "spline radiator"),
}


def ground_region(geom: GeometryModel) -> np.ndarray:
    prof = geom.ground_profile.points
    return np.vstack([[0.0, 0.0], prof, [geom.params.X, 0.0]])


def to_polygons(geom: GeometryModel) -> dict:
    return {
        "radiator": geom.radiator.points.tolist(),
        "ground": geom.ground_profile.points.tolist(),
        "feed": geom.feed.points.tolist(),
        "extension": geom.extension.points.tolist(),
        "features": {k: float(v) for k, v in geom.features.items()},
        "derived": dataclasses.asdict(geom.params),
        "units": "mm",
    }


def polygon_json(geom: GeometryModel) -> str:
    return json.dumps(to_polygons(geom), indent=1)


def _path(points, height_mm, closed=True) -> str:
    pts = np.asarray(points)
    xs = (pts[:, 0] + MARGIN_MM) * SVG_SCALE
    ys = (height_mm - pts[:, 1]) * SVG_SCALE
    body = " L ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f"M {body}" + (" Z" if closed else "")


def to_svg(geom: GeometryModel, title: str = "spline monopole") -> str:
    p = geom.params
    rad = geom.radiator.points
    top = max(p.Y, float(rad[:, 1].max())) + MARGIN_MM
    right = max(p.X, float(rad[:, 0].max())) + MARGIN_MM
    left = min(0.0, float(rad[:, 0].min()))
    width_mm = right - left + 2 * MARGIN_MM + 70.0  # room for the legend
    height_mm = top + MARGIN_MM
    shapes = {
        "ground": ground_region(geom),
        "extension": geom.extension.points,
        "feed": geom.feed.points,
        "radiator": rad,
    }
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_mm:.1f}mm" height="{height_mm:.1f}mm" '
        f'viewBox="0 0 {width_mm * SVG_SCALE:.1f} {height_mm * SVG_SCALE:.1f}">',
        f"<title>{escape(title)}</title>",
        "<desc>1 user unit = 0.1 mm; substrate 0.813 mm thick, relative permittivity 3.38 "
        "(metadata only)</desc>",
        f'<rect x="{MARGIN_MM * SVG_SCALE:.1f}" y="{(height_mm - p.Y) * SVG_SCALE:.1f}" '
        f'width="{p.X * SVG_SCALE:.1f}" height="{p.Y * SVG_SCALE:.1f}" fill="#fffde7" stroke="#000" '
        'stroke-width="1" id="substrate"/>',
    ]
    for name, pts in shapes.items():
        color, _ = LAYERS[name]
        opacity = "0.55" if name in ("ground", "extension") else "0.85"
        out.append(f'<g id="{name}"><path d="{_path(pts, height_mm)}" fill="{color}" '
                   f'fill-opacity="{opacity}" stroke="{color}" stroke-width="1"/></g>')
    lx = (right + 3 * MARGIN_MM) * SVG_SCALE
    for k, (name, (color, label)) in enumerate(LAYERS.items()):
        y = (MARGIN_MM + 4 * k) * SVG_SCALE
        out.append(f'<rect x="{lx:.1f}" y="{y:.1f}" width="20" height="20" fill="{color}"/>')
        out.append(f'<text x="{lx + 30:.1f}" y="{y + 16:.1f}" font-size="18" font-family="sans-serif">'
                   f"{escape(name)}: {escape(label)}</text>")
    y = (MARGIN_MM + 4 * len(LAYERS) + 2) * SVG_SCALE
    out.append(f'<text x="{lx:.1f}" y="{y:.1f}" font-size="18" font-family="sans-serif">'
               f"X = {p.X:.2f} mm, Y = {p.Y:.2f} mm, footprint {p.X * p.Y:.1f} mm2</text>")
    out.append("</svg>")
    return "\n".join(out) + "\n"

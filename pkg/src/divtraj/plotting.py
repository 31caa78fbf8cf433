"""Deterministic SVG rendering: scene panels and the tradeoff sweep figure.

SVG is generated by string assembly with fixed number formatting, so a
rerun with identical inputs produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np

COLOR_DRIVABLE = "#d4d4d4"
COLOR_OFFROAD = "#2e2e38"
COLOR_LANE = "#f2e94e"
COLOR_PAST = "#1f5fd6"
COLOR_FUTURE = "#15a34a"
COLOR_PRED = "#d62828"


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _polyline(points_px: np.ndarray, color: str, width: float, cls: str) -> str:
    pts = " ".join(f"{_fmt(p[0])},{_fmt(p[1])}" for p in points_px)
    return (
        f'<polyline class="{cls}" points="{pts}" fill="none" '
        f'stroke="{color}" stroke-width="{_fmt(width)}" stroke-linecap="round"/>'
    )


def _raster_rects(mask: np.ndarray, scale: float) -> List[str]:
    """Row-wise run-length rectangles for the non-drivable cells."""
    out = []
    h, w = mask.shape
    for i in range(h):
        j = 0
        while j < w:
            if mask[i, j]:
                j += 1
                continue
            j0 = j
            while j < w and not mask[i, j]:
                j += 1
            out.append(
                f'<rect x="{_fmt(j0 * scale)}" y="{_fmt(i * scale)}" '
                f'width="{_fmt((j - j0) * scale)}" height="{_fmt(scale)}" fill="{COLOR_OFFROAD}"/>'
            )
    return out


def render_scene_svg(
    drivable_mask: np.ndarray,
    lane_channel: np.ndarray,
    past_grid: np.ndarray,
    future_grid: np.ndarray,
    predictions_grid: Sequence[np.ndarray],
    scale: float = 8.0,
) -> str:
    """Scene panel in grid coordinates (already transformed by the caller).

    Past trajectory in blue, ground-truth future in green, each of the N
    predicted futures as a red polyline.
    """
    h, w = drivable_mask.shape
    width, height = w * scale, h * scale
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="{COLOR_DRIVABLE}"/>',
    ]
    parts.extend(_raster_rects(drivable_mask, scale))
    for i, j in np.argwhere(lane_channel > 0.5):
        parts.append(
            f'<rect x="{_fmt(j * scale)}" y="{_fmt(i * scale)}" width="{_fmt(scale)}" '
            f'height="{_fmt(scale)}" fill="{COLOR_LANE}" fill-opacity="0.35"/>'
        )
    for pred in predictions_grid:
        parts.append(_polyline(pred * scale, COLOR_PRED, 1.6, "prediction"))
    parts.append(_polyline(past_grid * scale, COLOR_PAST, 2.2, "past"))
    parts.append(_polyline(future_grid * scale, COLOR_FUTURE, 2.2, "future"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_sweep_svg(
    lambdas: Sequence[float],
    fsd: Sequence[float],
    dac: Sequence[float],
) -> str:
    """Two-axis tradeoff figure: FSD (red, left axis) vs DAC (blue, right axis)."""
    width, height = 560.0, 360.0
    ml, mr, mt, mb = 70.0, 70.0, 30.0, 50.0
    pw, ph = width - ml - mr, height - mt - mb
    lam = np.asarray(lambdas, dtype=np.float64)
    fsd = np.asarray(fsd, dtype=np.float64)
    dac = np.asarray(dac, dtype=np.float64)

    def x_of(v):
        return ml + (v - lam.min()) / max(lam.max() - lam.min(), 1e-12) * pw

    def y_left(v):
        top = max(fsd.max(), 1e-12)
        return mt + ph - v / top * ph

    def y_right(v):
        return mt + ph - v * ph  # DAC lives in [0, 1]

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>',
        f'<rect x="{_fmt(ml)}" y="{_fmt(mt)}" width="{_fmt(pw)}" height="{_fmt(ph)}" '
        f'fill="none" stroke="#888888"/>',
    ]
    for v in lam:
        parts.append(
            f'<text x="{_fmt(x_of(v))}" y="{_fmt(height - mb + 18)}" font-size="12" '
            f'text-anchor="middle">{_fmt(v)}</text>'
        )
    parts.append(
        f'<text x="{_fmt(ml + pw / 2)}" y="{_fmt(height - 10)}" font-size="13" '
        f'text-anchor="middle">diversity weight</text>'
    )
    parts.append(
        f'<text x="18" y="{_fmt(mt + ph / 2)}" font-size="13" fill="{COLOR_PRED}" '
        f'text-anchor="middle" transform="rotate(-90 18 {_fmt(mt + ph / 2)})">FSD</text>'
    )
    parts.append(
        f'<text x="{_fmt(width - 16)}" y="{_fmt(mt + ph / 2)}" font-size="13" fill="{COLOR_PAST}" '
        f'text-anchor="middle" transform="rotate(90 {_fmt(width - 16)} {_fmt(mt + ph / 2)})">DAC</text>'
    )
    fsd_pts = np.column_stack([[x_of(v) for v in lam], [y_left(v) for v in fsd]])
    dac_pts = np.column_stack([[x_of(v) for v in lam], [y_right(v) for v in dac]])
    parts.append(_polyline(fsd_pts, COLOR_PRED, 2.0, "fsd"))
    parts.append(_polyline(dac_pts, COLOR_PAST, 2.0, "dac"))
    for p in fsd_pts:
        parts.append(f'<circle cx="{_fmt(p[0])}" cy="{_fmt(p[1])}" r="3" fill="{COLOR_PRED}"/>')
    for p in dac_pts:
        parts.append(f'<circle cx="{_fmt(p[0])}" cy="{_fmt(p[1])}" r="3" fill="{COLOR_PAST}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, content: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content)

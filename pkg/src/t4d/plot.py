"""Hand-written SVG charts of lip y-coordinate trajectories (no plotting backend)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PANEL_W, PANEL_H = 420, 160
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 28, 36
COLORS = {"gt": "#1f4e79", "pred": "#c0392b"}


def _ticks(lo, hi, n=4):
    return np.linspace(lo, hi, n + 1)


def _panel(gt_y, pred_y, times, label, ox, oy) -> list[str]:
    lo = float(min(gt_y.min(), pred_y.min()))
    hi = float(max(gt_y.max(), pred_y.max()))
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    t0, t1 = float(times[0]), float(times[-1])
    if t1 - t0 <= 0:
        t1 = t0 + 1.0
    w = PANEL_W - MARGIN_L - MARGIN_R
    h = PANEL_H - MARGIN_T - MARGIN_B

    def sx(t):
        return ox + MARGIN_L + (t - t0) / (t1 - t0) * w

    def sy(y):
        return oy + MARGIN_T + (hi - y) / (hi - lo) * h

    out = [f'<g class="panel" data-landmark="{escape(label)}">',
           f'<text x="{ox + MARGIN_L}" y="{oy + 18}" font-size="12">{escape(label)}</text>',
           f'<rect x="{ox + MARGIN_L}" y="{oy + MARGIN_T}" width="{w}" height="{h}" '
           'fill="none" stroke="#999" stroke-width="0.5"/>']
    for t in _ticks(t0, t1):
        out.append(f'<text x="{sx(t):.2f}" y="{oy + PANEL_H - 18}" font-size="9" '
                   f'text-anchor="middle">{t:.2f}</text>')
    for y in _ticks(lo, hi, 2):
        out.append(f'<text x="{ox + MARGIN_L - 4}" y="{sy(y) + 3:.2f}" font-size="9" '
                   f'text-anchor="end">{y:.2f}</text>')
    out.append(f'<text x="{ox + MARGIN_L + w / 2}" y="{oy + PANEL_H - 4}" font-size="9" '
               'text-anchor="middle">time (s)</text>')
    for series, ys in (("gt", gt_y), ("pred", pred_y)):
        color = COLORS[series]
        if len(ys) == 1:
            out.append(f'<circle data-series="{series}" cx="{sx(times[0]):.4f}" '
                       f'cy="{sy(ys[0]):.4f}" r="3" fill="{color}"/>')
            continue
        pts = " ".join(f"{sx(t):.4f},{sy(y):.4f}" for t, y in zip(times, ys))
        dash = ' stroke-dasharray="5,3"' if series == "pred" else ""
        out.append(f'<polyline data-series="{series}" fill="none" stroke="{color}" '
                   f'stroke-width="1.2"{dash} points="{pts}"/>')
    out.append("</g>")
    return out


def lip_chart_svg(gt_points: np.ndarray, pred_points: np.ndarray, fps: float,
                  labels=None, title: str = "lip y-coordinate") -> str:
    """SVG with one panel per landmark; ground truth solid, prediction dashed.

    ``gt_points`` and ``pred_points`` are (n_landmarks, T, 3) arrays.
    """
    gt_points = np.asarray(gt_points, dtype=np.float64)
    pred_points = np.asarray(pred_points, dtype=np.float64)
    if gt_points.shape != pred_points.shape:
        raise ValueError("ground-truth and predicted trajectories differ in shape")
    n, T, _ = gt_points.shape
    labels = labels or [f"landmark {i}" for i in range(n)]
    times = np.arange(T) / fps
    cols = 2 if n > 1 else 1
    rows = -(-n // cols)
    width, height = cols * PANEL_W, rows * PANEL_H + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<text x="10" y="18" font-size="14">{escape(title)}</text>']
    for i in range(n):
        ox, oy = (i % cols) * PANEL_W, 30 + (i // cols) * PANEL_H
        parts += _panel(gt_points[i, :, 1], pred_points[i, :, 1], times, labels[i], ox, oy)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

"""Fixed-geometry panel figures.

Every grid cell is drawn at exactly one screen pixel per data pixel, so a
grid of n_cols x n_rows panels of HxW images measures

    width  = n_cols * W + (n_cols + 1) * PANEL_MARGIN
    height = n_rows * H + (n_rows + 1) * PANEL_MARGIN

with panel labels drawn inside the margin strip above each cell.  Output
is an 8-bit PNG with fixed metadata, so identical inputs give identical
bytes.  Confidence overlays use the reversed autumn colormap: a monotone
ramp from yellow (no confidence) to red (full confidence).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ShapeError  # noqa: E402

PANEL_MARGIN = 16
DPI = 100

Panel = tuple[str, np.ndarray, str, "tuple[float, float] | None"]


def grid_shape(n_panels: int, n_cols: int) -> tuple[int, int]:
    rows = (n_panels + n_cols - 1) // n_cols
    return rows, n_cols


def grid_pixel_size(n_panels: int, n_cols: int, h: int, w: int) -> tuple[int, int]:
    """(width, height) in pixels of the rendered grid file."""
    rows, cols = grid_shape(n_panels, n_cols)
    m = PANEL_MARGIN
    return cols * w + (cols + 1) * m, rows * h + (rows + 1) * m


def render_grid(panels: list[Panel], n_cols: int, path: str | Path) -> Path:
    """Render labeled panels row-major into a PNG at `path`."""
    if not panels:
        raise ShapeError("no panels to render")
    datas = [np.asarray(d, dtype=np.float64) for (_, d, _, _) in panels]
    if any(d.ndim != 2 for d in datas):
        raise ShapeError("panels must be 2-D arrays")
    h, w = datas[0].shape
    if any(d.shape != (h, w) for d in datas):
        raise ShapeError("all panels must share one shape")
    rows, cols = grid_shape(len(panels), n_cols)
    m = PANEL_MARGIN
    wt, ht = grid_pixel_size(len(panels), n_cols, h, w)

    fig = plt.figure(figsize=(wt / DPI, ht / DPI), dpi=DPI, facecolor="white")
    for k, ((label, _, cmap, vrange), data) in enumerate(zip(panels, datas)):
        r, c = divmod(k, cols)
        x0 = m + c * (w + m)
        y0 = ht - (m + r * (h + m)) - h     # matplotlib origin: bottom-left
        ax = fig.add_axes([x0 / wt, y0 / ht, w / wt, h / ht])
        if vrange is None:
            lo, hi = float(data.min()), float(data.max())
            if hi <= lo:
                lo, hi = lo - 0.5, lo + 0.5
        else:
            lo, hi = vrange
        ax.imshow(data, cmap=cmap, vmin=lo, vmax=hi,
                  interpolation="nearest", aspect="auto", origin="upper")
        ax.set_axis_off()
        fig.text((x0 + w / 2.0) / wt, (y0 + h + 3.0) / ht, label,
                 ha="center", va="bottom", fontsize=7)
    path = Path(path)
    try:
        fig.savefig(path, dpi=DPI, facecolor="white",
                    metadata={"Software": "lfa-panels"})
    finally:
        plt.close(fig)
    return path

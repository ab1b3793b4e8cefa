"""Branch outputs to confidence maps, masks, overlays, and IoU scores.

Confidence is the normalized absolute branch difference |Y1 - Y2|: the
two decoded branches agree on background and disagree where one branch
captured a structure, so the gap is the per-pixel evidence of structure.
An optional box blur smooths speckle before per-image min-max
normalization; a constant map normalizes to all zeros ("no evidence").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ParameterError, ShapeError
from .models import ModelSet
from .panels import render_grid
from .projection import project

RAW_MAGIC = b"LFAC"


@dataclass
class ConfidenceMap:
    values: np.ndarray              # (H, W) in [0, 1]
    source_id: str = ""

    def validate(self):
        v = self.values
        if v.ndim != 2:
            raise ShapeError(f"confidence map must be 2-D, got {v.shape}")
        if not np.isfinite(v).all():
            raise ShapeError("confidence map has non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ShapeError("confidence map outside [0, 1]")


def branch_outputs(models: ModelSet, batch: torch.Tensor | np.ndarray
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Decode both latent branches for a batch; returns (Y1, Y2, R)."""
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
    if batch.ndim == 2:
        batch = batch.unsqueeze(0)
    if batch.ndim == 3:
        batch = batch.unsqueeze(1)
    with models.inference():
        z = models.encoder(batch)
        z1, z2 = project(models.proj, z)
        y1 = models.decoder(z1)
        y2 = models.decoder(z2)
    return y1.squeeze(1), y2.squeeze(1), (y1 + y2).squeeze(1)


def sparse_difference_map(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    """Elementwise |Y1 - Y2|; symmetric and nonnegative."""
    y1, y2 = np.asarray(y1), np.asarray(y2)
    if y1.shape != y2.shape:
        raise ShapeError(f"branch shapes differ: {y1.shape} vs {y2.shape}")
    return np.abs(y1 - y2)


def box_blur(a: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter with border-truncated windows (no padding bias)."""
    a = np.asarray(a, dtype=np.float64)
    if radius <= 0:
        return a.copy()
    h, w = a.shape
    c = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(a, 0), 1, out=c[1:, 1:])
    i0 = np.clip(np.arange(h) - radius, 0, h)
    i1 = np.clip(np.arange(h) + radius + 1, 0, h)
    j0 = np.clip(np.arange(w) - radius, 0, w)
    j1 = np.clip(np.arange(w) + radius + 1, 0, w)
    sums = c[np.ix_(i1, j1)] - c[np.ix_(i0, j1)] - c[np.ix_(i1, j0)] + c[np.ix_(i0, j0)]
    counts = (i1 - i0)[:, None] * (j1 - j0)[None, :]
    return sums / counts


def confidence_map(diff: np.ndarray, smoothing_radius: int = 1,
                   source_id: str = "") -> ConfidenceMap:
    """Box-blur then min-max normalize to [0, 1]; constant maps go to zero."""
    diff = np.asarray(diff, dtype=np.float64)
    if diff.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got {diff.shape}")
    if diff.min() < 0:
        raise ParameterError("difference map must be nonnegative")
    s = box_blur(diff, smoothing_radius)
    lo, hi = float(s.min()), float(s.max())
    if hi - lo <= 0.0:
        values = np.zeros_like(s)
    else:
        values = (s - lo) / (hi - lo)
    return ConfidenceMap(values=values, source_id=source_id)


def threshold_mask(conf: ConfidenceMap | np.ndarray, tau: float) -> np.ndarray:
    if not (0.0 <= tau <= 1.0):
        raise ParameterError(f"threshold {tau} outside [0, 1]")
    values = conf.values if isinstance(conf, ConfidenceMap) else np.asarray(conf)
    return values >= tau


def branch_mses(x: np.ndarray, y1: np.ndarray, y2: np.ndarray,
                r: np.ndarray) -> dict[str, float]:
    """Per-image MSE of each branch and of R against the input.

    Logged for every annotated image; whether a single branch beats the
    full reconstruction is left to the reader of the log.
    """
    x = np.asarray(x, dtype=np.float64)
    out = {}
    for name, y in (("mse_y1", y1), ("mse_y2", y2), ("mse_r", r)):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != x.shape:
            raise ShapeError(f"{name}: shape {y.shape} != input {x.shape}")
        out[name] = float(np.mean((x - y) ** 2))
    return out


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; empty union counts as 1."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def save_confidence_raster(conf: ConfidenceMap, path: str | Path):
    """8-bit grayscale: round(values * 255)."""
    from PIL import Image
    conf.validate()
    Image.fromarray(np.rint(conf.values * 255.0).astype(np.uint8), mode="L").save(path)


def save_confidence_raw(conf: ConfidenceMap, path: str | Path):
    """Raw float export: 16-byte header (magic 'LFAC', uint32 H, uint32 W,
    4 zero pad bytes), then float32 little-endian values in row-major order."""
    conf.validate()
    h, w = conf.values.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(np.asarray([h, w], dtype="<u4").tobytes())
        f.write(b"\x00" * 4)
        f.write(conf.values.astype("<f4").tobytes(order="C"))


def load_confidence_raw(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16 or head[:4] != RAW_MAGIC:
            raise ParameterError(f"{path}: not a raw confidence file")
        h, w = np.frombuffer(head[4:12], dtype="<u4")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != int(h) * int(w):
        raise ParameterError(f"{path}: payload size does not match header")
    return data.reshape(int(h), int(w)).astype(np.float32)


def render_panels(x: np.ndarray, y1: np.ndarray, y2: np.ndarray, r: np.ndarray,
                  diff: np.ndarray, conf: ConfidenceMap | np.ndarray,
                  path: str | Path) -> Path:
    """2x3 overview figure: input and branch decodes on top; reconstruction,
    sparse |Y1-Y2|, and the yellow-to-red confidence overlay below."""
    cvals = conf.values if isinstance(conf, ConfidenceMap) else np.asarray(conf)
    arrays = [x, y1, y2, r, diff, cvals]
    shapes = {np.asarray(a).shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"panel shapes differ: {sorted(shapes)}")
    panels = [
        ("input", x, "gray", (-1.0, 1.0)),
        ("branch 1", y1, "gray", (-1.0, 1.0)),
        ("branch 2", y2, "gray", (-1.0, 1.0)),
        ("reconstruction", r, "gray", (-1.0, 1.0)),
        ("|Y1 - Y2|", diff, "gray", None),
        ("confidence", cvals, "autumn_r", (0.0, 1.0)),
    ]
    return render_grid(panels, n_cols=3, path=path)

"""Deterministic synthetic texture-composite dataset with ground-truth masks.

Each patch is a dipping layered-sinusoid background with exactly one
embedded structure; the mask marks the structure support.  Four structure
kinds echo the classic single-structure patch taxonomy (domes, faults,
chaotic zones, banded reflectors) at desk scale.  Backgrounds stay inside
a small amplitude budget while structures are full-amplitude carrier
textures with a constant envelope, so every pixel inside a structure
carries the same texture energy and stands far off the background.

Generation is a pure function of the spec, including its seed: the same
spec yields bit-identical pixels and masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GenerationError

KNOWN_KINDS = ("blob", "fault_line", "chaotic_patch", "layered_band")

# Reachable mask-area windows per kind (fractions of the patch), given the
# geometry each generator can produce at patch sizes >= 32.
_KIND_AREA_WINDOW = {
    "blob": (0.004, 0.60),
    "fault_line": (0.025, 0.40),
    "chaotic_patch": (0.004, 0.60),
    "layered_band": (0.05, 0.80),
}

_BG_AMP_RANGE = (0.08, 0.16)      # total background amplitude budget
_STRUCT_AMP = 0.85                # structure contrast level
_MAX_GEOMETRY_TRIES = 200


@dataclass
class SyntheticSpec:
    """Everything the generator consumes; the seed fixes all randomness."""

    patch_size: int = 64
    n_per_class: int = 50
    structure_kinds: tuple[str, ...] = KNOWN_KINDS
    layer_freq: tuple[float, float] = (2.0, 6.0)
    dip_deg: tuple[float, float] = (-15.0, 15.0)
    n_layers: tuple[int, int] = (2, 4)
    area_fraction: tuple[float, float] = (0.10, 0.40)
    noise_sigma: float = 0.02
    seed: int = 0

    def validate(self):
        if self.patch_size < 16:
            raise ConfigError(f"patch_size {self.patch_size} < 16")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        for kind in self.structure_kinds:
            if kind not in KNOWN_KINDS:
                raise ConfigError(f"unknown structure kind '{kind}'")
        lo, hi = self.area_fraction
        if not (0.0 < lo < hi < 1.0):
            raise ConfigError(
                f"area fraction interval ({lo}, {hi}) must be nonempty and inside (0, 1)"
            )
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not (self.layer_freq[0] > 0 and self.layer_freq[1] >= self.layer_freq[0]):
            raise ConfigError("layer_freq range invalid")
        if self.n_layers[0] < 1 or self.n_layers[1] < self.n_layers[0]:
            raise ConfigError("n_layers range invalid")


@dataclass
class SyntheticSample:
    pixels: np.ndarray            # (H, W) float32 in [-1, 1]
    mask: np.ndarray              # (H, W) bool
    source_id: str
    kind: str
    class_tag: str = field(default="Synthetic")


def _grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64),
                         indexing="ij")
    return yy / n, xx / n


def _layered_texture(rng: np.random.Generator, n: int, freq_range, dip_range_deg,
                     n_layer_range, total_amp: float) -> np.ndarray:
    """Sum of dipping sinusoid layer patterns, bounded by total_amp."""
    yy, xx = _grid(n)
    k = int(rng.integers(n_layer_range[0], n_layer_range[1] + 1))
    weights = rng.uniform(0.5, 1.0, size=k)
    weights = weights / weights.sum() * total_amp
    tex = np.zeros((n, n), dtype=np.float64)
    for a in weights:
        f = rng.uniform(*freq_range)
        dip = math.radians(rng.uniform(*dip_range_deg))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        tex += a * np.sin(2.0 * math.pi * f * (yy * math.cos(dip) + xx * math.sin(dip)) + phase)
    return tex


def _box_smooth(a: np.ndarray, r: int) -> np.ndarray:
    if r <= 0:
        return a
    k = 2 * r + 1
    pad = np.pad(a, r, mode="edge")
    c = np.cumsum(np.cumsum(pad, 0), 1)
    c = np.pad(c, ((1, 0), (1, 0)))
    h, w = a.shape
    out = (c[k:k + h, k:k + w] - c[:h, k:k + w] - c[k:k + h, :w] + c[:h, :w])
    return out / (k * k)


def _ellipse_mask(n: int, cy: float, cx: float, ry: float, rx: float, theta: float,
                  wobble: np.ndarray | None = None) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64),
                         indexing="ij")
    dy, dx = yy - cy, xx - cx
    u = dy * math.cos(theta) + dx * math.sin(theta)
    v = -dy * math.sin(theta) + dx * math.cos(theta)
    rho2 = (u / ry) ** 2 + (v / rx) ** 2
    if wobble is not None:
        ang = np.arctan2(v, u)
        mod = np.ones_like(ang)
        for j, (amp, ph) in enumerate(wobble, start=2):
            mod += amp * np.sin(j * ang + ph)
        rho2 = rho2 / np.clip(mod, 0.4, None) ** 2
    return rho2 <= 1.0


def _gen_blob(rng, n, f_target):
    """Filled ellipse holding an oriented full-amplitude carrier texture."""
    area = f_target * n * n
    r_geo = math.sqrt(area / math.pi)
    aspect = rng.uniform(0.6, 1.6)
    ry, rx = r_geo * math.sqrt(aspect), r_geo / math.sqrt(aspect)
    if max(ry, rx) > 0.45 * n:
        return None
    margin = max(ry, rx)
    cy = rng.uniform(margin, n - margin)
    cx = rng.uniform(margin, n - margin)
    theta = rng.uniform(0, math.pi)
    mask = _ellipse_mask(n, cy, cx, ry, rx, theta)
    # textured interior with a constant envelope: the local energy of the
    # carrier is the same everywhere inside the mask
    yy, xx = _grid(n)
    psi = rng.uniform(0.0, math.pi)
    f = rng.uniform(5.0, 9.0)
    content = _STRUCT_AMP * np.sin(
        2.0 * math.pi * f * (yy * math.cos(psi) + xx * math.sin(psi))
        + rng.uniform(0.0, 2.0 * math.pi))
    return mask, content


def _gen_fault_line(rng, n, f_target):
    """Thick high-contrast streak across the patch at a steep angle."""
    ang = math.radians(rng.uniform(30.0, 85.0) * (1.0 if rng.uniform() < 0.5 else -1.0))
    # unit normal of the line; line passes near patch center
    ny_, nx_ = math.cos(ang), math.sin(ang)
    off = rng.uniform(-0.2, 0.2) * n
    yy, xx = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64),
                         indexing="ij")
    d = (yy - n / 2) * ny_ + (xx - n / 2) * nx_ - off
    # chord length estimate from a thin reference band
    chord = max(float(np.count_nonzero(np.abs(d) <= 0.5)), float(n))
    t = f_target * n * n / chord
    if t < 1.0 or t > 0.35 * n:
        return None
    mask = np.abs(d) <= t / 2.0
    # full-amplitude carrier striped along the streak direction
    along = (yy - n / 2) * nx_ - (xx - n / 2) * ny_
    f = rng.uniform(5.0, 9.0)
    content = _STRUCT_AMP * np.sin(2.0 * math.pi * f * along / n + rng.uniform(0, 2.0 * math.pi))
    return mask, content


def _gen_chaotic_patch(rng, n, f_target):
    """Wobbly-boundary region filled with a disordered interference texture."""
    area = f_target * n * n
    r0 = math.sqrt(area / math.pi)
    if r0 > 0.42 * n:
        return None
    margin = 1.25 * r0
    cy = rng.uniform(min(margin, n / 2), max(n - margin, n / 2))
    cx = rng.uniform(min(margin, n / 2), max(n - margin, n / 2))
    theta = rng.uniform(0, math.pi)
    wobble = [(rng.uniform(0.05, 0.18), rng.uniform(0, 6.28)) for _ in range(3)]
    mask = _ellipse_mask(n, cy, cx, r0, r0, theta, wobble=wobble)
    # frequency-modulated carrier: disordered to the eye, but with a constant
    # envelope, so the whole region carries the same texture energy
    yy, xx = _grid(n)
    psi = rng.uniform(0.0, math.pi)
    u = yy * math.cos(psi) + xx * math.sin(psi)
    v = -yy * math.sin(psi) + xx * math.cos(psi)
    f = rng.uniform(5.0, 9.0)
    g = rng.uniform(2.0, 4.0)
    content = _STRUCT_AMP * np.sin(
        2.0 * math.pi * f * u + 2.5 * np.sin(2.0 * math.pi * g * v + rng.uniform(0, 6.28))
        + rng.uniform(0.0, 2.0 * math.pi))
    return mask, content


def _gen_layered_band(rng, n, f_target):
    """Horizontal-ish band of much finer, stronger layering than the background."""
    half = f_target * n / 2.0
    if half < 1.0 or half > 0.45 * n:
        return None
    c = rng.uniform(half + 1, n - half - 1)
    yy, xx = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64),
                         indexing="ij")
    wave_amp = rng.uniform(0.0, 2.0)
    wave = wave_amp * np.sin(2.0 * math.pi * xx / n * rng.uniform(1.0, 3.0) + rng.uniform(0, 6.28))
    mask = np.abs(yy - c - wave) <= half
    f_hi = rng.uniform(8.0, 13.0)
    dip = math.radians(rng.uniform(-8.0, 8.0))
    phase = rng.uniform(0, 2.0 * math.pi)
    # reflector package: much finer and stronger layering than the background
    content = _STRUCT_AMP * np.sin(
        2.0 * math.pi * f_hi * ((yy / n) * math.cos(dip) + (xx / n) * math.sin(dip)) + phase)
    return mask, content


_GENERATORS = {
    "blob": _gen_blob,
    "fault_line": _gen_fault_line,
    "chaotic_patch": _gen_chaotic_patch,
    "layered_band": _gen_layered_band,
}


def generate_synthetic(spec: SyntheticSpec) -> list[SyntheticSample]:
    """Produce n_per_class patches for every structure kind in the spec.

    Raises GenerationError naming the kind when the requested area-fraction
    interval cannot be met by that kind's geometry.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.patch_size
    lo, hi = spec.area_fraction
    samples: list[SyntheticSample] = []
    for kind in spec.structure_kinds:
        klo, khi = _KIND_AREA_WINDOW[kind]
        t_lo, t_hi = max(lo, klo), min(hi, khi)
        if t_lo >= t_hi:
            raise GenerationError(
                f"area fraction interval ({lo}, {hi}) unsatisfiable for structure "
                f"kind '{kind}' (reachable window ({klo}, {khi}))"
            )
        for idx in range(spec.n_per_class):
            sample = None
            for _ in range(_MAX_GEOMETRY_TRIES):
                f_target = rng.uniform(t_lo, t_hi)
                made = _GENERATORS[kind](rng, n, f_target)
                if made is None:
                    continue
                mask, content = made
                frac = float(mask.mean())
                if lo <= frac <= hi:
                    sample = (mask, content)
                    break
            if sample is None:
                raise GenerationError(
                    f"could not satisfy area fraction ({lo}, {hi}) for kind '{kind}' "
                    f"after {_MAX_GEOMETRY_TRIES} tries"
                )
            mask, content = sample
            bg = _layered_texture(rng, n, spec.layer_freq, spec.dip_deg, spec.n_layers,
                                  total_amp=rng.uniform(*_BG_AMP_RANGE))
            # feather the composite over ~1 px so structure borders are not
            # step discontinuities; the mask itself stays crisp
            alpha = _box_smooth(mask.astype(np.float64), 1)
            patch = alpha * content + (1.0 - alpha) * bg
            if spec.noise_sigma > 0:
                patch = patch + rng.normal(0.0, spec.noise_sigma, (n, n))
            patch = np.clip(patch, -1.0, 1.0).astype(np.float32)
            samples.append(SyntheticSample(
                pixels=patch,
                mask=mask,
                source_id=f"syn-{kind}-{idx:04d}",
                kind=kind,
            ))
    return samples

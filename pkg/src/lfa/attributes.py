"""Instantaneous trace attributes: analytic-signal envelope and phase.

The quadrature component comes from a frequency-domain Hilbert multiplier:
the DC bin is zeroed, positive frequencies are multiplied by -i, negative
frequencies by +i, and for even-length traces the Nyquist bin is zeroed as
well.  With that convention the quadrature of cos is sin, and applying the
multiplier twice negates any DC- and Nyquist-free trace.  No taper or
denoising is applied; the attributes are deliberately raw.

Traces run along image columns by default (vertical time axis).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError
from .panels import render_grid

TRACE_AXES = ("rows", "columns")


@dataclass
class AttributeSection:
    amplitude: np.ndarray          # (H, W), >= 0
    phase: np.ndarray              # (H, W), in (-pi, pi]
    source_id: str = ""

    def validate(self):
        if self.amplitude.shape != self.phase.shape:
            raise ShapeError("amplitude/phase shapes differ")
        if self.amplitude.min() < 0:
            raise ShapeError("negative amplitude")
        if self.phase.min() <= -np.pi or self.phase.max() > np.pi:
            raise ShapeError("phase outside (-pi, pi]")


def _hilbert_multiplier(t: int) -> np.ndarray:
    mult = np.zeros(t, dtype=np.complex128)
    half = (t + 1) // 2
    mult[1:half] = -1j               # positive frequencies
    if t % 2 == 0:
        mult[t // 2] = 0.0           # Nyquist zeroed for even lengths
        mult[t // 2 + 1:] = 1j       # negative frequencies
    else:
        mult[half:] = 1j
    return mult


def analytic_signal(trace: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (real part, quadrature part) of a real trace of length >= 4."""
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError(f"trace must be 1-D, got shape {x.shape}")
    if x.size < 4:
        raise ParameterError(f"trace length {x.size} < 4")
    q = np.fft.ifft(np.fft.fft(x) * _hilbert_multiplier(x.size)).real
    return x, q


def _quadrature_2d(section: np.ndarray, axis: int) -> np.ndarray:
    spec = np.fft.fft(section, axis=axis)
    mult = _hilbert_multiplier(section.shape[axis])
    shape = [1, 1]
    shape[axis] = section.shape[axis]
    return np.fft.ifft(spec * mult.reshape(shape), axis=axis).real


def _check_section(section: np.ndarray, trace_axis: str) -> tuple[np.ndarray, int]:
    if trace_axis not in TRACE_AXES:
        raise ParameterError(f"trace_axis must be one of {TRACE_AXES}, got {trace_axis!r}")
    sec = np.asarray(section, dtype=np.float64)
    if sec.ndim != 2:
        raise ParameterError(f"section must be 2-D, got shape {sec.shape}")
    axis = 0 if trace_axis == "columns" else 1
    if sec.shape[axis] < 4:
        raise ParameterError(f"trace axis length {sec.shape[axis]} < 4")
    return sec, axis


def instantaneous_amplitude(section: np.ndarray,
                            trace_axis: str = "columns") -> np.ndarray:
    """Per-trace envelope sqrt(real^2 + quadrature^2)."""
    sec, axis = _check_section(section, trace_axis)
    return np.hypot(sec, _quadrature_2d(sec, axis))


def instantaneous_phase(section: np.ndarray,
                        trace_axis: str = "columns") -> np.ndarray:
    """Per-sample atan2(quadrature, real) in (-pi, pi]; atan2(0, 0) = 0."""
    sec, axis = _check_section(section, trace_axis)
    ph = np.arctan2(_quadrature_2d(sec, axis), sec)
    ph[ph == -np.pi] = np.pi
    return ph


def compute_attributes(section: np.ndarray, trace_axis: str = "columns",
                       source_id: str = "") -> AttributeSection:
    return AttributeSection(
        amplitude=instantaneous_amplitude(section, trace_axis),
        phase=instantaneous_phase(section, trace_axis),
        source_id=source_id,
    )


def compare_panels(x: np.ndarray, conf, attrs: AttributeSection,
                   path: str | Path) -> Path:
    """Side-by-side: input, our confidence, envelope, phase (1x4 strip)."""
    cvals = getattr(conf, "values", None)
    cvals = np.asarray(conf if cvals is None else cvals)
    arrays = [np.asarray(x), cvals, attrs.amplitude, attrs.phase]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"panel shapes differ: {sorted(shapes)}")
    panels = [
        ("input", arrays[0], "gray", (-1.0, 1.0)),
        ("confidence", cvals, "autumn_r", (0.0, 1.0)),
        ("inst. amplitude", attrs.amplitude, "gray", None),
        ("inst. phase", attrs.phase, "gray", (-np.pi, np.pi)),
    ]
    return render_grid(panels, n_cols=4, path=path)

"""Independent loop-based reference implementations used by the tests.

Everything here is deliberately naive (explicit Python loops, direct
formulas) so it cannot share bugs with the vectorized library code.
"""

import math

import numpy as np


def conv2d_loop(x, w, b, stride, pad):
    """Direct cross-correlation; x (B,Ci,H,W), w (Co,Ci,K,K)."""
    bsz, ci, h, ww = x.shape
    co, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (ww + 2 * pad - k) // stride + 1
    xp = np.zeros((bsz, ci, h + 2 * pad, ww + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + ww] = x
    out = np.zeros((bsz, co, ho, wo), dtype=x.dtype)
    for n in range(bsz):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[n, c, i * stride + ky, j * stride + kx] * w[o, c, ky, kx]
                    out[n, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def conv_transpose2d_loop(x, w, b, stride, pad, out_pad):
    """Direct transposed convolution (input scatter); w (Ci,Co,K,K)."""
    bsz, ci, h, ww = x.shape
    _, co, k, _ = w.shape
    ho = (h - 1) * stride - 2 * pad + k + out_pad
    wo = (ww - 1) * stride - 2 * pad + k + out_pad
    out = np.zeros((bsz, co, ho, wo), dtype=x.dtype)
    for n in range(bsz):
        for c in range(ci):
            for i in range(h):
                for j in range(ww):
                    v = x[n, c, i, j]
                    for o in range(co):
                        for ky in range(k):
                            for kx in range(k):
                                oy = i * stride + ky - pad
                                ox = j * stride + kx - pad
                                if 0 <= oy < ho and 0 <= ox < wo:
                                    out[n, o, oy, ox] += v * w[c, o, ky, kx]
    if b is not None:
        for o in range(co):
            out[:, o] += b[o]
    return out


def bn_eval_loop(x, gamma, beta, mean, var, eps):
    """Per-channel inference-mode batch norm on (B,C,H,W)."""
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        out[:, c] = (x[:, c] - mean[c]) / math.sqrt(var[c] + eps) * gamma[c] + beta[c]
    return out


def leaky_loop(x, slope):
    return np.where(x >= 0, x, slope * x)


def quadrature_dft_loop(trace):
    """Hilbert quadrature by explicit O(T^2) DFT sums.

    Convention: DC bin zeroed, positive frequencies rotated by -i,
    negative by +i, and the Nyquist bin (even T) zeroed.
    """
    t = len(trace)
    coef = np.zeros(t, dtype=complex)
    for k in range(t):
        acc = 0.0 + 0.0j
        for n in range(t):
            acc += trace[n] * np.exp(-2j * math.pi * k * n / t)
        coef[k] = acc
    out = np.zeros(t)
    for n in range(t):
        acc = 0.0 + 0.0j
        for k in range(t):
            if k == 0 or (t % 2 == 0 and k == t // 2):
                mult = 0.0
            elif k < (t + 1) // 2:
                mult = -1j
            else:
                mult = 1j
            acc += mult * coef[k] * np.exp(2j * math.pi * k * n / t)
        out[n] = (acc / t).real
    return out


def matvec_loop(m, v):
    rows, cols = m.shape
    out = np.zeros(rows, dtype=np.result_type(m, v))
    for i in range(rows):
        for j in range(cols):
            out[i] += m[i, j] * v[j]
    return out


def matmul_loop(a, b):
    r, k = a.shape
    _, c = b.shape
    out = np.zeros((r, c), dtype=np.result_type(a, b))
    for i in range(r):
        for j in range(c):
            for n in range(k):
                out[i, j] += a[i, n] * b[n, j]
    return out


def frob_sq_loop(m):
    acc = 0.0
    for row in m:
        for v in row:
            acc += float(v) * float(v)
    return acc

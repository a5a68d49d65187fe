"""Level-of-detail weight, texture sampling, SH colour and the per-hit shading rule.

All functions broadcast: ``u``/``v`` and directions may be arrays.
"""

from dataclasses import dataclass

import numpy as np

from .scene import TEX_HIGH_SIZE

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


def lod_weight(r, high_size=TEX_HIGH_SIZE):
    """Blend weight of the high-frequency texture for a screen radius ``r`` in pixels."""
    r = np.asarray(r, dtype=np.float64)
    assert np.all(r >= 0), "screen radius must be non-negative"
    w = np.minimum(np.maximum(r / high_size, 0.0), 1.0)
    return float(w) if w.ndim == 0 else w


def bilinear_taps(size, u, v):
    """Texel indices and weights used to sample an ``size`` x ``size`` grid at (u, v).

    Returns ``(rows, cols, weights)`` each shaped (..., 4), ordered
    (r0,c0), (r0,c1), (r1,c0), (r1,c1). Addressing is clamp-to-edge.
    """
    tx = (np.asarray(u, dtype=np.float64) + 1.0) * 0.5 * size - 0.5
    ty = (np.asarray(v, dtype=np.float64) + 1.0) * 0.5 * size - 0.5
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    c0 = np.clip(x0, 0, size - 1)
    c1 = np.clip(x0 + 1, 0, size - 1)
    r0 = np.clip(y0, 0, size - 1)
    r1 = np.clip(y0 + 1, 0, size - 1)
    rows = np.stack([r0, r0, r1, r1], axis=-1)
    cols = np.stack([c0, c1, c0, c1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return rows, cols, w


def sample_bilinear(grid, u, v):
    """Bilinearly sample an (S, S, C) grid; u runs along columns, v along rows."""
    grid = np.asarray(grid)
    rows, cols, w = bilinear_taps(grid.shape[0], u, v)
    texels = grid[rows, cols].astype(np.float64)
    return (texels * w[..., None]).sum(axis=-2)


def sh_basis(dirs):
    """Degree-1 real SH basis values (..., 4) for unit directions."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([np.full_like(x, SH_C0), -SH_C1 * y, SH_C1 * z, -SH_C1 * x], axis=-1)


def eval_sh(coeffs, dirs):
    """RGB from (..., 4, 3) coefficients for unit view directions (..., 3)."""
    return np.einsum("...k,...kc->...c", sh_basis(dirs), np.asarray(coeffs, dtype=np.float64))


@dataclass
class ShadeSample:
    rgb: np.ndarray
    alpha: float
    omega: float


def shade_raw(sh_rgb, low_texel, high_raw_texel, omega, dc=0.0):
    """Unclamped rgb and alpha from an SH colour and sampled texels."""
    h = np.tanh(high_raw_texel)
    rgb = sh_rgb + low_texel[..., :3] + omega * h[..., :3]
    alpha = low_texel[..., 3] + omega * h[..., 3] + dc
    return rgb, alpha


def shade(surfel, u, v, view_dir, omega, dc=0.0):
    low = sample_bilinear(surfel.tex.low, u, v)
    high = sample_bilinear(surfel.tex.high, u, v)
    rgb, alpha = shade_raw(eval_sh(surfel.sh, view_dir), low, high, omega, dc)
    return ShadeSample(rgb=np.clip(rgb, 0.0, 1.0), alpha=float(np.clip(alpha, 0.0, 1.0)), omega=float(omega))

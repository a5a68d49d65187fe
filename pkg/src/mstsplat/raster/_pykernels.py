"""Pure numpy fallback with the same signatures as the compiled kernels.

Instead of walking tiles, each sorted surfel is swept over its screen bounding box
and composited into the whole frame; per pixel this visits the same surfels in the
same order as the tiled kernel, so the two backends agree to rounding.
"""

import numpy as np

from ..geometry import NEAR_EPS, PARALLEL_EPS
from ..shading import bilinear_taps


def _hits(k, mu, tx, bx, nx, scale, bbox, xs, ys, alive):
    """Pixels of surfel k's bbox hit by their rays: (flat rows, cols, u, v, depth) in bbox-local order."""
    x0, x1, y0, y1 = bbox[k]
    if x0 > x1 or y0 > y1:
        return None
    dx = xs[x0:x1 + 1][None, :]
    dy = ys[y0:y1 + 1][:, None]
    dnorm = np.sqrt(dx * dx + dy * dy + 1.0)
    n, m, t, b = nx[k], mu[k], tx[k], bx[k]
    denom = dx * n[0] + dy * n[1] + n[2]
    ok = (np.abs(denom) >= PARALLEL_EPS * dnorm) & alive[y0:y1 + 1, x0:x1 + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = (m[0] * n[0] + m[1] * n[1] + m[2] * n[2]) / denom
    depth = tt * dnorm
    ok &= depth > NEAR_EPS
    px = tt * dx - m[0]
    py = tt * dy - m[1]
    pz = tt - m[2]
    with np.errstate(invalid="ignore"):
        u = (px * t[0] + py * t[1] + pz * t[2]) / scale[k, 0]
        v = (px * b[0] + py * b[1] + pz * b[2]) / scale[k, 1]
        ok &= (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    r, c = np.nonzero(ok)
    return r + y0, c + x0, u[r, c], v[r, c], np.broadcast_to(depth, ok.shape)[r, c]


def _shade(k, u, v, texi, low, high, omega, shc, dc):
    """Clamped rgb/alpha plus what the backward pass needs."""
    ti = texi[k]
    rl, cl, wl = bilinear_taps(low.shape[1], u, v)
    rh, ch, wh = bilinear_taps(high.shape[1], u, v)
    L = (low[ti][rl, cl].astype(np.float64) * wl[..., None]).sum(-2)
    Hv = np.tanh((high[ti][rh, ch].astype(np.float64) * wh[..., None]).sum(-2))
    om = omega[k]
    rgb_raw = shc[k] + L[:, :3] + om * Hv[:, :3]
    a_raw = L[:, 3] + om * Hv[:, 3] + dc[k]
    rgb = np.clip(rgb_raw, 0.0, 1.0)
    a = np.clip(a_raw, 0.0, 1.0)
    free_rgb = (rgb_raw > 0.0) & (rgb_raw < 1.0)
    free_a = (a_raw > 0.0) & (a_raw < 1.0)
    return rgb, a, free_rgb, free_a, (rl, cl, wl, rh, ch, wh, Hv)


def _sweep(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi, low, high,
           fx, fy, cx, cy, W, H, cutoff, tfloor, keep):
    xs = (np.arange(W) + 0.5 - cx) / fx
    ys = (np.arange(H) + 0.5 - cy) / fy
    T = np.ones((H, W))
    alive = np.ones((H, W), dtype=bool)
    color = np.zeros((H, W, 3))
    alpha = np.zeros((H, W))
    depth = np.zeros((H, W))
    normal = np.zeros((H, W, 3))
    steps = []
    for k in range(len(mu)):
        hit = _hits(k, mu, tx, bx, nx, scale, bbox, xs, ys, alive)
        if hit is None or len(hit[0]) == 0:
            continue
        r, c, u, v, d = hit
        rgb, a, free_rgb, free_a, taps = _shade(k, u, v, texi, low, high, omega, shc, dc)
        sel = a >= cutoff
        if not sel.any():
            continue
        r, c, u, v, d, rgb, a = r[sel], c[sel], u[sel], v[sel], d[sel], rgb[sel], a[sel]
        Tb = T[r, c]
        w = Tb * a
        color[r, c] += w[:, None] * rgb
        alpha[r, c] += w
        depth[r, c] += w * d
        normal[r, c] += w[:, None] * nw[k]
        T[r, c] = Tb * (1.0 - a)
        alive[r, c] = T[r, c] >= tfloor
        if keep:
            steps.append((k, r, c, a, d, w, Tb, rgb, free_rgb[sel], free_a[sel],
                          tuple(x[sel] for x in taps)))
    return color, alpha, depth, normal, steps


def forward(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi, low, high,
            fx, fy, cx, cy, W, H, cutoff, tfloor, tile, threads, record):
    color, alpha, depth, normal, steps = _sweep(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi,
                                                low, high, fx, fy, cx, cy, W, H, cutoff, tfloor, record)
    if not record:
        return color, alpha, depth, normal, None
    if steps:
        pix = np.concatenate([r * W + c for _, r, c, *_ in steps])
        s = np.concatenate([np.full(len(st[1]), st[0], dtype=np.int32) for st in steps])
        a = np.concatenate([st[3] for st in steps])
        d = np.concatenate([st[4] for st in steps])
        w = np.concatenate([st[5] for st in steps])
        order = np.argsort(pix, kind="stable")
        pix, s, a, d, w = pix[order], s[order], a[order], d[order], w[order]
    else:
        pix = np.zeros(0, dtype=np.int64)
        s = np.zeros(0, dtype=np.int32)
        a = d = w = np.zeros(0)
    offsets = np.zeros(W * H + 1, dtype=np.int64)
    np.add.at(offsets, pix + 1, 1)
    return color, alpha, depth, normal, (np.cumsum(offsets), s, a, d, w)


def backward(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi, low, high,
             fx, fy, cx, cy, W, H, cutoff, tfloor, tile, dl_dcolor, g_low, g_high, g_shc, g_dc):
    *_, steps = _sweep(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi, low, high,
                       fx, fy, cx, cy, W, H, cutoff, tfloor, True)
    # suffix colour of everything behind the current surfel, per pixel
    S = np.zeros((H, W, 3))
    for k, r, c, a, d, w, Tb, rgb, free_rgb, free_a, taps in reversed(steps):
        g = dl_dcolor[r, c]
        dlda = (g * Tb[:, None] * (rgb - S[r, c])).sum(1)
        rl, cl, wl, rh, ch, wh, Hv = taps
        ti = texi[k]
        om = omega[k]
        gr = np.where(free_rgb, g * w[:, None], 0.0)
        g_shc[k] += gr.sum(0)
        ga = np.where(free_a, dlda, 0.0)
        g_dc[k] += ga.sum()
        grad4 = np.concatenate([gr, ga[:, None]], axis=1)
        np.add.at(g_low[ti], (rl, cl), grad4[:, None, :] * wl[..., None])
        gh = grad4 * om * (1.0 - Hv * Hv)
        np.add.at(g_high[ti], (rh, ch), gh[:, None, :] * wh[..., None])
        S[r, c] = a[:, None] * rgb + (1.0 - a[:, None]) * S[r, c]

"""Reference renderer: every pixel against every sorted surfel, world-space rays, no culling.

Slow by design; it shares only the depth sort with :func:`render` and exists to check it.
"""

from types import SimpleNamespace

import numpy as np

from .. import geometry
from ..animation import canonical_directions, pose_scene
from ..shading import eval_sh, lod_weight, sample_bilinear, shade_raw
from .core import HitRecords, RenderFrame, RenderSettings, sort_surfels


def render_brute(scene, camera, pose=None, settings=None):
    settings = settings or RenderSettings()
    posed = pose_scene(scene, pose)
    order = sort_surfels(scene, camera, posed=posed)
    W, H = camera.width, camera.height
    origin = camera.center
    dirs = camera.pixel_rays().reshape(-1, 3)
    npix = W * H

    T = np.ones(npix)
    alive = np.ones(npix, dtype=bool)
    color = np.zeros((npix, 3))
    alpha = np.zeros(npix)
    depth = np.zeros(npix)
    normal = np.zeros((npix, 3))
    rec = []
    omegas = np.zeros(len(order))

    for k, i in enumerate(order):
        s = SimpleNamespace(mu=posed.mu[i], rot=posed.rot[i], scale=posed.scale[i])
        if settings.force_omega is not None:
            omega = float(settings.force_omega)
        else:
            omega = lod_weight(geometry.screen_radius(s, camera), scene.tex_high_size)
        omegas[k] = omega
        t_ax, b_ax, n_ax = geometry.surfel_axes(s.rot)
        denom = dirs @ n_ax
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = ((s.mu - origin) @ n_ax) / denom
            p = origin + dist[:, None] * dirs - s.mu
            u = (p @ t_ax) / s.scale[0]
            v = (p @ b_ax) / s.scale[1]
            hit = ((np.abs(denom) >= geometry.PARALLEL_EPS) & (dist > geometry.NEAR_EPS)
                   & (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0) & alive)
        pix = np.nonzero(hit)[0]
        if len(pix) == 0:
            continue
        view = s.mu - origin
        view = view / np.linalg.norm(view)
        low = sample_bilinear(scene.tex_low[i], u[pix], v[pix])
        high = sample_bilinear(scene.tex_high[i], u[pix], v[pix])
        sh_dir = canonical_directions(scene, posed, view[None], [i])[0]
        rgb, a = shade_raw(eval_sh(scene.sh[i], sh_dir), low, high, omega, posed.dc[i])
        rgb = np.clip(rgb, 0.0, 1.0)
        a = np.clip(a, 0.0, 1.0)
        keep = a >= settings.alpha_cutoff
        pix, rgb, a, d = pix[keep], rgb[keep], a[keep], dist[pix][keep]
        n_face = -n_ax if n_ax @ view > 0 else n_ax
        w = T[pix] * a
        color[pix] += w[:, None] * rgb
        alpha[pix] += w
        depth[pix] += w * d
        normal[pix] += w[:, None] * n_face
        T[pix] *= 1.0 - a
        alive[pix] = T[pix] >= settings.transmittance_floor
        rec.append((pix, np.full(len(pix), k, dtype=np.int32), a, d, w))

    if rec:
        pix, s_idx, a, d, w = (np.concatenate(x) for x in zip(*rec))
        srt = np.argsort(pix, kind="stable")
        pix, s_idx, a, d, w = pix[srt], s_idx[srt], a[srt], d[srt], w[srt]
    else:
        pix = np.zeros(0, dtype=np.int64)
        s_idx = np.zeros(0, dtype=np.int32)
        a = d = w = np.zeros(0)
    offsets = np.zeros(npix + 1, dtype=np.int64)
    np.add.at(offsets, pix + 1, 1)
    hits = HitRecords(width=W, offsets=np.cumsum(offsets), surfel_ids=scene.ids[order[s_idx]],
                      alpha=a, depth=d, weight=w, sorted_index=s_idx)
    return RenderFrame(color=color.reshape(H, W, 3), alpha=alpha.reshape(H, W),
                       depth=depth.reshape(H, W), normal=normal.reshape(H, W, 3),
                       per_pixel_hits=hits, omega=omegas, order=order)

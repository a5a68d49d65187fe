"""Analytic colour-side gradients and the central-difference oracle that checks them."""

from dataclasses import dataclass

import numpy as np

from .. import geometry
from ..animation import pose_scene
from ..raster import RenderSettings, forward_prepared, prepare, render, render_backward
from ..scene import PoseOffsets, SkeletonPose
from ..shading import bilinear_taps
from .losses import pixel_kind, pixel_loss, pixel_loss_grad, total_loss

SCENE_GROUPS = ("tex_low", "tex_high", "sh", "mu", "rot", "scale")
OFFSET_GROUPS = ("dc", "dx", "dr", "ds")


@dataclass(frozen=True)
class ParamHandle:
    """One scalar parameter: a group name and an index into that group's array."""
    group: str
    index: tuple

    def __post_init__(self):
        if self.group not in SCENE_GROUPS + OFFSET_GROUPS:
            raise ValueError(f"unknown parameter group {self.group!r}")
        object.__setattr__(self, "index", tuple(int(i) for i in np.atleast_1d(self.index)))


def with_offsets(scene, pose, offsets):
    """Pose carrying ``offsets``; an identity skeleton when no pose is given."""
    if offsets is None:
        return pose
    if pose is None:
        return SkeletonPose.identity(scene.joint_count, offsets)
    return SkeletonPose(pose.joints, offsets)


def color_gradient(frame, gt, cfg, step, mask=None, surrogate=None):
    """dL/d(frame colour) for the analytic objective.

    That objective is the pixel loss; with the surrogate on, the MS-SSIM term adds
    ``lambda_ms_ssim`` times the MSE gradient (a straight-through stand-in).
    """
    kind = pixel_kind(step, cfg)
    g = pixel_loss_grad(frame.color, gt, kind, mask)
    use = cfg.ms_ssim_surrogate if surrogate is None else surrogate
    if use and cfg.lambda_ms_ssim > 0:
        g = g + cfg.lambda_ms_ssim * pixel_loss_grad(frame.color, gt, "MSE", mask)
    return g


@dataclass
class Gradients:
    tex_low: np.ndarray
    tex_high: np.ndarray
    sh: np.ndarray
    dc: np.ndarray

    def as_dict(self):
        return {"tex_low": self.tex_low, "tex_high": self.tex_high, "sh": self.sh, "dc": self.dc}


def backward(scene, camera, gt, cfg, step, pose=None, offsets=None, mask=None, settings=None,
             surrogate=None, frame=None):
    """Gradients of the analytic objective w.r.t. textures, SH coefficients and per-surfel dc."""
    settings = settings or RenderSettings(thread_count=cfg.thread_count)
    pose = with_offsets(scene, pose, offsets)
    if frame is None:
        frame = render(scene, camera, pose, settings)
    dl = color_gradient(frame, gt, cfg, step, mask, surrogate)
    g_low, g_high, g_sh, g_dc = render_backward(scene, camera, dl, pose, settings)
    return Gradients(tex_low=g_low, tex_high=g_high, sh=g_sh, dc=g_dc)


def central_difference(f, x, eps):
    """(f(x + eps) - f(x - eps)) / (2 eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return (f(x + eps) - f(x - eps)) / (2.0 * eps)


def objective(scene, camera, gt, cfg, step, pose=None, offsets=None, mask=None, settings=None,
              kind="pixel", neighbors=None):
    """Loss evaluated by the oracle: ``"pixel"`` (the analytic objective) or ``"total"``."""
    settings = settings or RenderSettings(record_hits=kind == "total")
    frame = render(scene, camera, with_offsets(scene, pose, offsets), settings)
    if kind == "pixel":
        return pixel_loss(frame.color, gt, pixel_kind(step, cfg), mask)
    if kind == "total":
        return total_loss(frame, gt, scene, step, cfg, camera, mask, offsets, neighbors)[0]
    raise ValueError(f"unknown objective {kind!r}")


def _array(scene, offsets, group):
    if group in SCENE_GROUPS:
        return getattr(scene, group)
    return getattr(offsets, group)


def fd_gradient(scene, camera, gt, handle, eps=1e-4, cfg=None, step=0, pose=None, offsets=None,
                mask=None, settings=None, kind="pixel", neighbors=None):
    """Central difference of the objective in one parameter.

    The step actually taken is measured after storing into the parameter's dtype, so
    float32 rounding of ``p +- eps`` does not bias the quotient.
    """
    from .config import FitConfig
    cfg = cfg or FitConfig()
    if eps <= 0:
        raise ValueError("eps must be positive")
    scene = scene.copy()
    offsets = PoseOffsets(**{k: getattr(offsets, k).copy() for k in OFFSET_GROUPS}) if offsets is not None \
        else PoseOffsets.zeros(len(scene))
    arr = _array(scene, offsets, handle.group)
    p0 = arr[handle.index]
    vals = []
    realized = []
    for sgn in (1.0, -1.0):
        arr[handle.index] = p0 + sgn * eps
        realized.append(float(arr[handle.index]))
        vals.append(objective(scene, camera, gt, cfg, step, pose, offsets, mask, settings, kind, neighbors))
    arr[handle.index] = p0
    h = realized[0] - realized[1]
    return (vals[0] - vals[1]) / h if h != 0 else 0.0


def fd_texture_gradients(scene, camera, gt, handles, eps=1e-4, loss_kind="MSE", mask=None,
                         settings=None, pose=None, offsets=None):
    """Central differences of the pixel loss for many texel handles, reusing one prepared frame."""
    settings = settings or RenderSettings()
    pose = with_offsets(scene, pose, offsets)
    prep = prepare(scene, camera, pose, settings)
    low = scene.tex_low.copy()
    high = scene.tex_high.copy()
    out = np.zeros(len(handles))
    for k, hd in enumerate(handles):
        if hd.group not in ("tex_low", "tex_high"):
            raise ValueError("fd_texture_gradients only handles texture groups")
        arr = low if hd.group == "tex_low" else high
        p0 = arr[hd.index]
        vals, realized = [], []
        for sgn in (1.0, -1.0):
            arr[hd.index] = p0 + sgn * eps
            realized.append(float(arr[hd.index]))
            color = forward_prepared(prep, scene, camera, settings, tex_low=low, tex_high=high)[0]
            vals.append(pixel_loss(color, gt, loss_kind, mask))
        arr[hd.index] = p0
        out[k] = (vals[0] - vals[1]) / (realized[0] - realized[1])
    return out


def texel_coverage(scene, camera, pose=None, settings=None):
    """Largest bilinear weight any composited hit gives each texel.

    Returns ``(low, high)`` arrays shaped (N, S, S). Hits are recomputed from world-space
    rays, independently of the rasterizer's camera-space arithmetic.
    """
    settings = settings or RenderSettings()
    settings = RenderSettings(**{**settings.__dict__, "record_hits": True})
    frame = render(scene, camera, pose, settings)
    hits = frame.per_pixel_hits
    posed = pose_scene(scene, pose)
    cov_l = np.zeros(scene.tex_low.shape[:3])
    cov_h = np.zeros(scene.tex_high.shape[:3])
    counts = hits.counts()
    pix = np.repeat(np.arange(len(counts)), counts)
    idx = frame.order[hits.sorted_index]
    rays = camera.pixel_rays().reshape(-1, 3)
    origin = camera.center
    for i in np.unique(idx):
        sel = pix[idx == i]
        t_ax, b_ax, n_ax = geometry.surfel_axes(posed.rot[i])
        d = rays[sel]
        dist = ((posed.mu[i] - origin) @ n_ax) / (d @ n_ax)
        p = origin + dist[:, None] * d - posed.mu[i]
        u = (p @ t_ax) / posed.scale[i, 0]
        v = (p @ b_ax) / posed.scale[i, 1]
        for cov, S in ((cov_l, scene.tex_low_size), (cov_h, scene.tex_high_size)):
            r, c, w = bilinear_taps(S, u, v)
            np.maximum.at(cov[i], (r.ravel(), c.ravel()), w.ravel())
    return cov_l, cov_h


@dataclass
class GradCheckReport:
    """Per-group worst relative error between analytic and central-difference gradients."""
    max_rel_error: dict
    checked: dict
    worst: dict

    @property
    def overall(self):
        return max(self.max_rel_error.values(), default=0.0)


def _rel_error(a, f, floor):
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


def gradient_check(scene, camera, gt, eps=1e-4, min_coverage=0.05, mask=None, pose=None, offsets=None,
                   settings=None, floor=1e-6, max_texels=None, rng=None):
    """Compare :func:`backward` with central differences of the MSE pixel loss.

    Textures are checked on texels whose largest bilinear weight over the frame is at
    least ``min_coverage``; SH coefficients and dc on every surfel that is composited
    somewhere. Relative errors use ``max(|analytic|, |fd|, floor)`` as denominator.
    """
    from .config import FitConfig
    cfg = FitConfig(pixel_switch_frac=0.0, total_steps=1)
    settings = settings or RenderSettings()
    offsets = offsets if offsets is not None else PoseOffsets.zeros(len(scene))
    g = backward(scene, camera, gt, cfg, 0, pose, offsets, mask, settings, surrogate=False)
    cov_l, cov_h = texel_coverage(scene, camera, with_offsets(scene, pose, offsets), settings)
    errors, counts, worst = {}, {}, {}
    for group, cov, grad in (("tex_low", cov_l, g.tex_low), ("tex_high", cov_h, g.tex_high)):
        idx = np.argwhere(cov >= min_coverage)
        if max_texels is not None and len(idx) > max_texels:
            rng = rng or np.random.default_rng(0)
            idx = idx[rng.choice(len(idx), max_texels, replace=False)]
        handles = [ParamHandle(group, (i, r, c, ch)) for i, r, c in idx for ch in range(4)]
        fd = fd_texture_gradients(scene, camera, gt, handles, eps, "MSE", mask, settings, pose, offsets)
        an = np.array([grad[h.index] for h in handles])
        _record(errors, counts, worst, group, handles, an, fd, floor)
    visible = np.unique(render(scene, camera, with_offsets(scene, pose, offsets),
                               RenderSettings(**{**settings.__dict__, "record_hits": True}))
                        .order[_hit_sorted_indices(scene, camera, pose, offsets, settings)])
    for group, grad, shape in (("sh", g.sh, (4, 3)), ("dc", g.dc, ())):
        handles = [ParamHandle(group, (i,) + tuple(k)) for i in visible for k in np.ndindex(shape)]
        fd = np.array([fd_gradient(scene, camera, gt, h, eps, cfg, 0, pose, offsets, mask, settings)
                       for h in handles])
        an = np.array([grad[h.index] for h in handles])
        _record(errors, counts, worst, group, handles, an, fd, floor)
    return GradCheckReport(errors, counts, worst)


def _hit_sorted_indices(scene, camera, pose, offsets, settings):
    s = RenderSettings(**{**settings.__dict__, "record_hits": True})
    return render(scene, camera, with_offsets(scene, pose, offsets), s).per_pixel_hits.sorted_index


def _record(errors, counts, worst, group, handles, an, fd, floor):
    counts[group] = len(handles)
    if not handles:
        errors[group] = 0.0
        return
    rel = _rel_error(an, fd, floor)
    k = int(np.argmax(rel))
    errors[group] = float(rel[k])
    worst[group] = (handles[k].index, float(an[k]), float(fd[k]))

"""Front end of the rasterizer: settings, frame buffers, sorting, per-frame setup and backend dispatch."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from ..animation import canonical_directions, pose_scene
from ..shading import eval_sh, lod_weight, sh_basis

log = logging.getLogger(__name__)

BBOX_SLACK = 1e-3

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

from . import _pykernels

_backend = "compiled" if _kernels is not None else "python"


def available_backends():
    return ["compiled", "python"] if _kernels is not None else ["python"]


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"compiled"`` or ``"python"`` for subsequent renders; returns the previous choice."""
    global _backend
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _kernels is None:
        raise RuntimeError("compiled kernels are not available; build the extension first")
    prev, _backend = _backend, name
    return prev


def _kernel_module(backend):
    backend = backend or _backend
    if backend == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled kernels are not available")
        return _kernels
    return _pykernels


@dataclass
class RenderSettings:
    tile_size: int = 16
    transmittance_floor: float = 1e-4
    alpha_cutoff: float = 1.0 / 255.0
    force_omega: float | None = None
    thread_count: int = 1
    record_hits: bool = False

    def __post_init__(self):
        if not 0 < self.alpha_cutoff < 1:
            raise ValueError("alpha_cutoff must be in (0, 1)")
        if not 0 < self.transmittance_floor < 1:
            raise ValueError("transmittance_floor must be in (0, 1)")
        if self.tile_size < 1:
            raise ValueError("tile_size must be positive")
        if self.force_omega is not None and not 0.0 <= self.force_omega <= 1.0:
            raise ValueError("force_omega must lie in [0, 1]")
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")


@dataclass
class HitRecords:
    """Per-pixel ordered hit lists in CSR form (pixel index = y * W + x)."""
    width: int
    offsets: np.ndarray
    surfel_ids: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    weight: np.ndarray
    sorted_index: np.ndarray

    def at(self, x, y):
        p = y * self.width + x
        a, b = self.offsets[p], self.offsets[p + 1]
        return [(int(i), float(al), float(d)) for i, al, d in
                zip(self.surfel_ids[a:b], self.alpha[a:b], self.depth[a:b])]

    def counts(self):
        return np.diff(self.offsets)


@dataclass
class RenderFrame:
    """Frame buffers, (H, W[, 3]) arrays.

    ``color`` is the front-to-back composite over transparent black; ``depth`` and
    ``normal`` hold contribution-weighted sums, so expected depth is depth / alpha.
    """
    color: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    per_pixel_hits: HitRecords | None = None
    omega: np.ndarray | None = None
    order: np.ndarray | None = None

    def expected_depth(self):
        out = np.zeros_like(self.depth)
        m = self.alpha > 0
        out[m] = self.depth[m] / self.alpha[m]
        return out

    def rgba(self):
        return np.concatenate([self.color, self.alpha[..., None]], axis=-1)


def sort_surfels(scene, camera, pose=None, posed=None):
    """Scene indices of surfels in front of the camera by ascending centre depth, ties by id."""
    if posed is None:
        posed = pose_scene(scene, pose)
    z = camera.world_to_cam(posed.mu)[:, 2] if len(posed) else np.zeros(0)
    front = np.nonzero(z > geometry.NEAR_EPS)[0]
    return front[np.lexsort((scene.ids[front], z[front]))]


@dataclass
class Prepared:
    order: np.ndarray
    mu: np.ndarray
    t: np.ndarray
    b: np.ndarray
    n: np.ndarray
    scale: np.ndarray
    omega: np.ndarray
    shc: np.ndarray
    dc: np.ndarray
    nw: np.ndarray
    bbox: np.ndarray
    view_dir: np.ndarray = field(repr=False)


def prepare(scene, camera, pose=None, settings=None, posed=None):
    """Pose, cull, sort and move surfels to camera space; compute per-surfel omega, SH colour and bbox."""
    settings = settings or RenderSettings()
    if posed is None:
        posed = pose_scene(scene, pose)
    order = sort_surfels(scene, camera, posed=posed)
    R = camera.R
    mu_w = posed.mu[order]
    rot = posed.rot[order]
    scale = np.ascontiguousarray(posed.scale[order])
    tw, bw, nw = geometry.surfel_axes(rot)
    mu_c = camera.world_to_cam(mu_w)
    t_c, b_c, n_c = tw @ R.T, bw @ R.T, nw @ R.T
    # orient normals toward the camera; the sign is constant over a planar surfel
    flip = (n_c * mu_c).sum(1) > 0
    nw_cam = np.where(flip[:, None], -nw, nw)

    if settings.force_omega is not None:
        omega = np.full(len(order), float(settings.force_omega))
    else:
        omega = lod_weight(geometry.screen_radii(mu_w, rot, scale, camera), scene.tex_high_size)
        omega = np.atleast_1d(np.asarray(omega, dtype=np.float64))

    view = mu_w - camera.center
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    view = canonical_directions(scene, posed, view, order)
    shc = eval_sh(scene.sh[order].astype(np.float64), view)

    bbox = _screen_bboxes(mu_c, t_c, b_c, scale, camera)
    c = np.ascontiguousarray
    return Prepared(order=order, mu=c(mu_c), t=c(t_c), b=c(b_c), n=c(n_c), scale=c(scale),
                    omega=c(omega, dtype=np.float64), shc=c(shc), dc=c(posed.dc[order], dtype=np.float64),
                    nw=c(nw_cam), bbox=bbox, view_dir=view)


def _screen_bboxes(mu_c, t_c, b_c, scale, camera):
    """Conservative inclusive pixel bounds [x0, x1, y0, y1]; empty boxes have x0 > x1."""
    W, H = camera.width, camera.height
    m = len(mu_c)
    bbox = np.empty((m, 4), dtype=np.int32)
    if m == 0:
        return bbox
    signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)
    corners = (mu_c[:, None, :] + signs[None, :, 0, None] * (t_c * scale[:, :1])[:, None, :]
               + signs[None, :, 1, None] * (b_c * scale[:, 1:])[:, None, :])
    z = corners[..., 2]
    behind = (z <= geometry.NEAR_EPS).any(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = camera.fx * corners[..., 0] / z + camera.cx
        ys = camera.fy * corners[..., 1] / z + camera.cy
    # pixel centres sit at i + 0.5; the footprint is the hull of the projected corners,
    # so a small slack is enough to absorb rounding
    x0 = np.ceil(xs.min(1) - 0.5 - BBOX_SLACK)
    x1 = np.floor(xs.max(1) - 0.5 + BBOX_SLACK)
    y0 = np.ceil(ys.min(1) - 0.5 - BBOX_SLACK)
    y1 = np.floor(ys.max(1) - 0.5 + BBOX_SLACK)
    x0 = np.where(behind, 0, x0)
    x1 = np.where(behind, W - 1, x1)
    y0 = np.where(behind, 0, y0)
    y1 = np.where(behind, H - 1, y1)
    empty = (x1 < 0) | (x0 > W - 1) | (y1 < 0) | (y0 > H - 1) | ~np.isfinite(x0 + x1 + y0 + y1)
    bbox[:, 0] = np.clip(np.nan_to_num(x0), 0, W - 1)
    bbox[:, 1] = np.clip(np.nan_to_num(x1), 0, W - 1)
    bbox[:, 2] = np.clip(np.nan_to_num(y0), 0, H - 1)
    bbox[:, 3] = np.clip(np.nan_to_num(y1), 0, H - 1)
    bbox[empty] = (1, 0, 1, 0)
    return bbox


def _kernel_args(prep, scene, camera, settings):
    return (prep.mu, prep.t, prep.b, prep.n, prep.scale, prep.omega, prep.shc, prep.dc, prep.nw,
            prep.bbox, np.ascontiguousarray(prep.order, dtype=np.int64),
            scene.tex_low, scene.tex_high,
            float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
            camera.width, camera.height, float(settings.alpha_cutoff),
            float(settings.transmittance_floor), int(settings.tile_size))


def _hit_records(scene, prep, width, rec):
    offs, s, a, d, w = rec
    return HitRecords(width=width, offsets=offs, surfel_ids=scene.ids[prep.order[s]] if len(s) else
                      np.zeros(0, dtype=np.int64), alpha=a, depth=d, weight=w, sorted_index=s)


def forward_prepared(prep, scene, camera, settings, backend=None, tex_low=None, tex_high=None):
    """Run the kernel on an existing :func:`prepare` result, optionally with substitute textures.

    Texture-only changes do not alter sorting, LOD or bounds, so gradient checks reuse one prep.
    """
    args = list(_kernel_args(prep, scene, camera, settings))
    if tex_low is not None:
        args[11] = tex_low
    if tex_high is not None:
        args[12] = tex_high
    return _kernel_module(backend).forward(*args, int(settings.thread_count), bool(settings.record_hits))


def render(scene, camera, pose=None, settings=None, backend=None, posed=None):
    """Tiled front-to-back rasterization of a (posed) scene."""
    settings = settings or RenderSettings()
    prep = prepare(scene, camera, pose, settings, posed=posed)
    color, alpha, depth, normal, rec = forward_prepared(prep, scene, camera, settings, backend)
    hits = _hit_records(scene, prep, camera.width, rec) if rec is not None else None
    return RenderFrame(color=color, alpha=alpha, depth=depth, normal=normal, per_pixel_hits=hits,
                       omega=prep.omega, order=prep.order)


def render_backward(scene, camera, dl_dcolor, pose=None, settings=None, backend=None, posed=None):
    """Colour-side gradients given dL/d(frame colour).

    Returns ``(g_low, g_high, g_sh, g_dc)`` indexed like the scene's surfels;
    ``g_sh`` is (N, 4, 3) and ``g_dc`` is (N,).
    """
    settings = settings or RenderSettings()
    prep = prepare(scene, camera, pose, settings, posed=posed)
    n = len(scene)
    g_low = np.zeros(scene.tex_low.shape)
    g_high = np.zeros(scene.tex_high.shape)
    m = len(prep.order)
    g_shc = np.zeros((m, 3))
    g_dcs = np.zeros(m)
    k = _kernel_module(backend)
    k.backward(*_kernel_args(prep, scene, camera, settings),
               np.ascontiguousarray(dl_dcolor, dtype=np.float64), g_low, g_high, g_shc, g_dcs)
    g_sh = np.zeros((n, 4, 3))
    g_sh[prep.order] = sh_basis(prep.view_dir)[:, :, None] * g_shc[:, None, :]
    g_dc = np.zeros(n)
    g_dc[prep.order] = g_dcs
    return g_low, g_high, g_sh, g_dc

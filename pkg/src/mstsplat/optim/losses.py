"""Image losses, regularizers and the combined, schedule-gated training objective.

Predictions are frame colour buffers (composited over black); ground truth is an
(H, W, 3) or (H, W, 4) image whose RGB is likewise composited over black.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..metrics import WIN_SIZE, ms_ssim

log = logging.getLogger(__name__)


def _rgb(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., :3]


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    return np.asarray(mask, dtype=bool)


def pixel_kind(step, cfg):
    """L1 before the switch point, MSE from it on (the boundary belongs to MSE)."""
    return "L1" if step < cfg.boundary(cfg.pixel_switch_frac) else "MSE"


def pixel_loss(pred, gt, kind="MSE", mask=None):
    """Masked mean absolute or squared error over RGB."""
    pred, gt = _rgb(pred), _rgb(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if mask is None:
        n = pred.shape[0] * pred.shape[1]
        d = pred - gt
    else:
        m = _mask(mask, pred.shape)
        n = int(m.sum())
        d = pred[m] - gt[m]
    if n == 0:
        log.warning("pixel loss over an empty mask; returning 0")
        return 0.0
    if kind == "L1":
        return float(np.abs(d).sum() / (3 * n))
    if kind == "MSE":
        return float((d * d).sum() / (3 * n))
    raise ValueError(f"unknown pixel loss kind {kind!r}")


def pixel_loss_grad(pred, gt, kind="MSE", mask=None):
    """dL/dpred for :func:`pixel_loss`, shape (H, W, 3); sign(0) = 0 for L1."""
    pred, gt = _rgb(pred), _rgb(gt)
    m = _mask(mask, pred.shape)
    n = int(m.sum())
    g = np.zeros(pred.shape)
    if n == 0:
        return g
    d = (pred - gt) * m[..., None]
    if kind == "L1":
        g = np.sign(d) / (3 * n)
    elif kind == "MSE":
        g = 2.0 * d / (3 * n)
    else:
        raise ValueError(f"unknown pixel loss kind {kind!r}")
    return g


def ms_ssim_term(pred, gt, mask=None):
    """(1 - MS-SSIM, score); pixels outside the mask are zeroed in both images."""
    pred, gt = _rgb(pred), _rgb(gt)
    if min(pred.shape[:2]) < WIN_SIZE:
        return 0.0, 1.0
    if mask is not None:
        m = _mask(mask, pred.shape)[..., None]
        pred, gt = pred * m, gt * m
    score = ms_ssim(pred, gt)
    return 1.0 - score, score


def reg_ctrl(dx, neighbors):
    """Sum over directed neighbour pairs (i, j) of ||dx_i - dx_j||."""
    dx = np.asarray(dx, dtype=np.float64)
    neighbors = np.asarray(neighbors)
    if dx.size == 0 or neighbors.size == 0:
        return 0.0
    return float(np.linalg.norm(dx[:, None, :] - dx[neighbors], axis=-1).sum())


def reg_scale(scales, floor=0.01):
    """Sum over surfels and axes of max(floor, s)."""
    return float(np.maximum(floor, np.asarray(scales, dtype=np.float64)).sum())


def reg_scale_grad(scales, floor=0.01):
    return (np.asarray(scales, dtype=np.float64) > floor).astype(np.float64)


def depth_normals(frame, camera, cutoff=1.0 / 255.0):
    """Normals from central differences of the back-projected expected depth.

    Returns (N, valid) where N is (H, W, 3) in world space, oriented toward the camera,
    and valid marks pixels whose four neighbours and themselves have alpha >= cutoff.
    """
    H, W = frame.alpha.shape
    N = np.zeros((H, W, 3))
    valid = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return N, valid
    rays = camera.pixel_rays()
    P = camera.center + frame.expected_depth()[..., None] * rays
    fg = frame.alpha >= cutoff
    valid[1:-1, 1:-1] = (fg[1:-1, 1:-1] & fg[1:-1, 2:] & fg[1:-1, :-2] & fg[2:, 1:-1] & fg[:-2, 1:-1])
    dpx = P[1:-1, 2:] - P[1:-1, :-2]
    dpy = P[2:, 1:-1] - P[:-2, 1:-1]
    n = np.cross(dpx, dpy)
    norm = np.linalg.norm(n, axis=-1)
    ok = norm > 0
    n[ok] /= norm[ok][:, None]
    n = np.where(((n * rays[1:-1, 1:-1]).sum(-1) > 0)[..., None], -n, n)
    N[1:-1, 1:-1] = n
    valid[1:-1, 1:-1] &= ok
    return N, valid


def reg_normal(frame, scene=None, camera=None, cutoff=1.0 / 255.0):
    """Alpha-weighted mean of 1 - n_render . n_depth over pixels with a usable depth normal."""
    if camera is None:
        raise ValueError("reg_normal needs the camera the frame was rendered with")
    N, valid = depth_normals(frame, camera, cutoff)
    n = frame.normal
    norm = np.linalg.norm(n, axis=-1)
    valid &= norm > 0
    if not valid.any():
        return 0.0
    nh = n[valid] / norm[valid][:, None]
    a = frame.alpha[valid]
    return float((a * (1.0 - (nh * N[valid]).sum(-1))).sum() / a.sum())


def reg_depth(hits):
    """Mean over pixels with hits of sum_{i != j} w_i w_j |d_i - d_j|."""
    if hits is None:
        raise ValueError("reg_depth needs a frame rendered with hit recording")
    counts = hits.counts()
    npix = int((counts > 0).sum())
    if npix == 0:
        return 0.0
    pix = np.repeat(np.arange(len(counts)), counts)
    order = np.lexsort((hits.depth, pix))
    p, w, d = pix[order], hits.weight[order], hits.depth[order]
    # sorted by depth within each pixel: sum_{i<j} w_i w_j (d_j - d_i) via exclusive prefix sums
    starts = hits.offsets[:-1][p]
    cw = np.cumsum(w) - w
    cwd = np.cumsum(w * d) - w * d
    base_w = np.concatenate([[0.0], np.cumsum(w)])[starts]
    base_wd = np.concatenate([[0.0], np.cumsum(w * d)])[starts]
    term = w * (d * (cw - base_w) - (cwd - base_wd))
    return float(2.0 * term.sum() / npix)


@dataclass
class LossBreakdown:
    total: float
    pixel_kind: str
    terms: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    ms_ssim_score: float = 1.0

    def to_dict(self):
        return asdict(self)


def term_weights(step, cfg):
    return {
        "pixel": 1.0,
        "ms_ssim": cfg.lambda_ms_ssim,
        "perceptual": cfg.lambda_perceptual,
        "ctrl": cfg.lambda_c,
        "scale": cfg.lambda_s,
        "normal": cfg.lambda_n if step >= cfg.boundary(cfg.norm_reg_start_frac) else 0.0,
        "depth": cfg.lambda_d if step >= cfg.boundary(cfg.depth_reg_start_frac) else 0.0,
    }


def total_loss(frame, gt, scene, step, cfg, camera=None, mask=None, offsets=None, neighbors=None):
    """Weighted objective and its per-term breakdown.

    Gated terms are still evaluated (for logging) but carry weight 0. The perceptual
    slot is always 0: no perceptual network ships with this package.
    """
    kind = pixel_kind(step, cfg)
    w = term_weights(step, cfg)
    terms = {"pixel": pixel_loss(frame.color, gt, kind, mask)}
    terms["ms_ssim"], score = ms_ssim_term(frame.color, gt, mask)
    terms["perceptual"] = 0.0
    terms["ctrl"] = reg_ctrl(offsets.dx, neighbors) if offsets is not None and neighbors is not None else 0.0
    terms["scale"] = reg_scale(scene.scale) if scene is not None else 0.0
    terms["normal"] = reg_normal(frame, scene, camera) if camera is not None else 0.0
    terms["depth"] = reg_depth(frame.per_pixel_hits) if frame.per_pixel_hits is not None else 0.0
    if w["depth"] > 0 and frame.per_pixel_hits is None:
        raise ValueError("depth regularizer is active but the frame has no hit records")
    total = float(sum(w[k] * terms[k] for k in terms))
    if not math.isfinite(total):
        log.debug("non-finite loss terms: %s", terms)
    return total, LossBreakdown(total=total, pixel_kind=kind, terms=terms, weights=w, ms_ssim_score=score)

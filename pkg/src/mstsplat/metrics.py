"""PSNR, SSIM and MS-SSIM on float images in [0, 1].

Images are (H, W) or (H, W, C); multi-channel scores are channel means. Masks are
(H, W) booleans, normally the ground-truth alpha > 0.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

WIN_SIZE = 11
WIN_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    if pred.ndim != 3:
        raise ValueError(f"expected (H, W[, C]) images, got {pred.shape}")
    return pred, gt


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {shape[:2]}")
    return mask


def psnr(pred, gt, mask=None):
    """10 log10(1 / MSE) over masked pixels; ``math.inf`` when they match exactly."""
    pred, gt = _pair(pred, gt)
    m = _mask(mask, pred.shape)
    if not m.any():
        raise ValueError("psnr over an empty mask")
    mse = float(np.mean((pred[m] - gt[m]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size=WIN_SIZE, sigma=WIN_SIGMA):
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur_valid(x, win):
    r = len(win) // 2
    y = ndimage.correlate1d(x, win, axis=0, mode="constant")
    y = ndimage.correlate1d(y, win, axis=1, mode="constant")
    return y[r:-r, r:-r]


def _ssim_maps(x, y, win, blur):
    C1, C2 = K1 ** 2, K2 ** 2
    mx, my = blur(x, win), blur(y, win)
    sxx = blur(x * x, win) - mx * mx
    syy = blur(y * y, win) - my * my
    sxy = blur(x * y, win) - mx * my
    cs = (2 * sxy + C2) / (sxx + syy + C2)
    return ((2 * mx * my + C1) / (mx * mx + my * my + C1)) * cs, cs


def _blur_same(x, win):
    y = ndimage.correlate1d(x, win, axis=0, mode="reflect")
    return ndimage.correlate1d(y, win, axis=1, mode="reflect")


def ssim(pred, gt, mask=None):
    """Mean local SSIM (Gaussian 11x11, sigma 1.5) over masked window centres.

    Statistics are filtered over the whole image with reflected borders; the outer
    five-pixel band, where windows reach past the image, is excluded.
    """
    pred, gt = _pair(pred, gt)
    H, W, C = pred.shape
    r = WIN_SIZE // 2
    if H < WIN_SIZE or W < WIN_SIZE:
        raise ValueError(f"ssim needs images of at least {WIN_SIZE}x{WIN_SIZE}")
    m = _mask(mask, pred.shape)[r:H - r, r:W - r]
    if not m.any():
        raise ValueError("ssim over an empty mask")
    win = gaussian_window()
    vals = []
    for c in range(C):
        smap, _ = _ssim_maps(pred[..., c], gt[..., c], win, _blur_same)
        vals.append(smap[r:H - r, r:W - r][m].mean())
    return float(np.mean(vals))


def ms_ssim_scales(height, width):
    """Number of scales that fit: the coarsest level must still hold an 11 px window."""
    short = min(height, width)
    if short < WIN_SIZE:
        raise ValueError(f"ms_ssim needs images of at least {WIN_SIZE} px on the short side")
    n = 1
    while n < len(MS_WEIGHTS) and short >= WIN_SIZE * 2 ** n:
        n += 1
    return n


def _avg_pool2(x):
    """2x2 average pooling; odd sides get one zero row/column of padding on each side."""
    ph, pw = x.shape[0] % 2, x.shape[1] % 2
    if ph or pw:
        x = np.pad(x, ((ph, ph), (pw, pw)))
    H2, W2 = x.shape[0] // 2, x.shape[1] // 2
    return x[:2 * H2, :2 * W2].reshape(H2, 2, W2, 2).mean(axis=(1, 3))


def ms_ssim(pred, gt, return_scales=False):
    """Multi-scale SSIM with valid-window statistics and average-pool downsampling.

    Below 176 px on the short side fewer scales are used and the remaining weights
    are renormalised to sum to one; the full five-scale weights are used as published
    (they sum to 1.0001).
    """
    pred, gt = _pair(pred, gt)
    H, W, C = pred.shape
    n = ms_ssim_scales(H, W)
    w = np.asarray(MS_WEIGHTS[:n])
    if n < len(MS_WEIGHTS):
        w = w / w.sum()
    win = gaussian_window()
    per_channel = []
    for c in range(C):
        x, y = pred[..., c], gt[..., c]
        mcs = []
        for level in range(n):
            smap, cs = _ssim_maps(x, y, win, _blur_valid)
            if level < n - 1:
                mcs.append(max(cs.mean(), 0.0))
                x, y = _avg_pool2(x), _avg_pool2(y)
        s = max(smap.mean(), 0.0)
        per_channel.append(np.prod(np.asarray(mcs) ** w[:-1]) * s ** w[-1])
    score = float(np.mean(per_channel))
    return (score, n) if return_scales else score


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ms_ssim: float
    pixels: int
    ms_ssim_scales: int = len(MS_WEIGHTS)
    lpips: float | None = None
    fid: float | None = None
    name: str | None = None

    def to_dict(self):
        d = asdict(self)
        if math.isinf(self.psnr):
            d["psnr"] = "inf"
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(pred, gt, mask=None, name=None):
    """Full report; PSNR and SSIM honour the mask, MS-SSIM is computed on the whole frame."""
    pred_, gt_ = _pair(pred, gt)
    m = _mask(mask, pred_.shape)
    score, n = ms_ssim(pred_, gt_, return_scales=True)
    return MetricReport(psnr=psnr(pred_, gt_, m), ssim=ssim(pred_, gt_, m), ms_ssim=score,
                        pixels=int(m.sum()), ms_ssim_scales=n, name=name)


def aggregate(reports):
    """Mean of each metric over reports; infinite PSNRs are reported separately."""
    if not reports:
        return {}
    finite = [r.psnr for r in reports if math.isfinite(r.psnr)]
    return {
        "count": len(reports),
        "psnr": float(np.mean(finite)) if finite else "inf",
        "psnr_infinite": len(reports) - len(finite),
        "ssim": float(np.mean([r.ssim for r in reports])),
        "ms_ssim": float(np.mean([r.ms_ssim for r in reports])),
    }

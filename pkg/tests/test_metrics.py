import math

import numpy as np
import pytest
import torch
from pytorch_msssim import ms_ssim as ref_ms_ssim
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from mstsplat.metrics import (
    MS_WEIGHTS,
    MetricReport,
    aggregate,
    evaluate,
    gaussian_window,
    ms_ssim,
    ms_ssim_scales,
    psnr,
    ssim,
)


def ref_ssim(a, b):
    return structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False)


def ref_msssim(a, b):
    t = lambda x: torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)[None]))  # noqa: E731
    return float(ref_ms_ssim(t(a), t(b), data_range=1.0, size_average=True))


def _pairs(n=5, size=(192, 200)):
    rng = np.random.default_rng(99)
    out = []
    for k in range(n):
        gt = rng.uniform(size=size + (3,))
        gt = np.clip(gt + np.linspace(0, 0.3, size[1])[None, :, None], 0, 1)
        pred = np.clip(gt + rng.normal(scale=0.02 * (k + 1), size=gt.shape), 0, 1)
        out.append((pred, gt))
    return out


def test_psnr_examples(rng):
    x = rng.uniform(size=(8, 8, 3))
    assert psnr(x, x) == math.inf
    assert psnr(np.full((4, 4), 0.6), np.full((4, 4), 0.5)) == pytest.approx(20.0)
    assert psnr(np.ones((4, 4)), np.zeros((4, 4))) == pytest.approx(0.0)


def test_psnr_mask_and_errors(rng):
    a, b = rng.uniform(size=(2, 16, 16, 3))
    m = np.zeros((16, 16), bool)
    m[4:9, 2:12] = True
    assert psnr(a, b, m) == pytest.approx(10 * np.log10(1 / np.mean((a[m] - b[m]) ** 2)))
    with pytest.raises(ValueError):
        psnr(a, b, np.zeros((16, 16), bool))
    with pytest.raises(ValueError):
        psnr(a, b[:8])


def test_psnr_matches_skimage():
    for pred, gt in _pairs():
        assert psnr(pred, gt) == pytest.approx(peak_signal_noise_ratio(gt, pred, data_range=1.0), abs=1e-9)


def test_ssim_identity_and_symmetry(rng):
    x = rng.uniform(size=(32, 40, 3))
    y = rng.uniform(size=(32, 40, 3))
    assert ssim(x, x) == pytest.approx(1.0)
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)
    assert psnr(x, y) == pytest.approx(psnr(y, x))


def test_ssim_offset_example_matches_reference():
    gt = np.full((64, 64, 3), 0.5)
    gt[20:40, 10:50] = 0.45
    pred = np.clip(gt + 0.5, 0, 1)
    assert abs(ssim(pred, gt) - ref_ssim(pred, gt)) <= 1e-6


def test_ssim_noise_is_low(rng):
    a, b = rng.uniform(size=(2, 96, 96, 3))
    assert ssim(a, b) < 0.2


def test_ssim_matches_skimage():
    for pred, gt in _pairs():
        assert abs(ssim(pred, gt) - ref_ssim(pred, gt)) <= 1e-6


def test_ssim_mask_selects_window_centres(rng):
    pred, gt = rng.uniform(size=(2, 40, 40))
    _, full = structural_similarity(pred, gt, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, full=True)
    m = np.zeros((40, 40), bool)
    m[10:30, 5:20] = True
    assert ssim(pred, gt, m) == pytest.approx(full[m].mean(), abs=1e-9)


def test_window():
    w = gaussian_window()
    assert len(w) == 11 and w.sum() == pytest.approx(1.0) and w.argmax() == 5


def test_ms_ssim_scales():
    assert ms_ssim_scales(176, 300) == 5
    assert ms_ssim_scales(175, 300) == 4
    assert ms_ssim_scales(11, 11) == 1
    with pytest.raises(ValueError):
        ms_ssim_scales(10, 50)


def test_ms_ssim_identity_and_ordering(rng):
    x = rng.uniform(size=(180, 180, 3))
    assert ms_ssim(x, x) == pytest.approx(1.0)
    assert ms_ssim(1 - x, x) < ms_ssim(x, x)


def test_ms_ssim_constant_images_match_reference():
    a = np.full((192, 192, 3), 0.5)
    b = np.full((192, 192, 3), 0.6)
    assert abs(ms_ssim(a, b) - ref_msssim(a, b)) <= 1e-6


def test_ms_ssim_matches_reference():
    for pred, gt in _pairs():
        assert abs(ms_ssim(pred, gt) - ref_msssim(pred, gt)) <= 1e-6


def test_ms_ssim_odd_sizes_match_reference(rng):
    gt = rng.uniform(size=(177, 203, 3))
    pred = np.clip(gt + rng.normal(scale=0.05, size=gt.shape), 0, 1)
    assert abs(ms_ssim(pred, gt) - ref_msssim(pred, gt)) <= 1e-6


def test_ms_ssim_fewer_scales_renormalised(rng):
    x = rng.uniform(size=(64, 64))
    score, n = ms_ssim(x, np.clip(x + 0.05, 0, 1), return_scales=True)
    assert n == 3 and 0 < score < 1
    assert sum(MS_WEIGHTS) == pytest.approx(1.0001)


def test_report_and_aggregate(rng):
    gt = rng.uniform(size=(48, 48, 3))
    r1 = evaluate(gt, gt, name="same")
    r2 = evaluate(np.clip(gt + 0.1, 0, 1), gt, gt[..., 0] > 0.2)
    assert r1.to_dict()["psnr"] == "inf" and r1.lpips is None and r1.fid is None
    assert r2.pixels == int((gt[..., 0] > 0.2).sum())
    agg = aggregate([r1, r2])
    assert agg["count"] == 2 and agg["psnr_infinite"] == 1 and agg["psnr"] == pytest.approx(r2.psnr)
    assert isinstance(MetricReport(1.0, 1.0, 1.0, 3).to_json(), str)

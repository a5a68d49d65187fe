import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from mstsplat import synth
from mstsplat.augment import (
    EVAL_ZOOM_IN,
    EVAL_ZOOM_OUT,
    AugmentSpec,
    augment_image,
    augment_intrinsics,
    offsets,
    run_manifest,
    valid_mask,
)
from mstsplat.camera import PinholeCamera, look_at, save_camera
from mstsplat.geometry import project_point
from mstsplat.io import read_png, write_png
from mstsplat.metrics import psnr
from mstsplat.raster import RenderSettings, render


def _cam(W=1000, H=1000, f=1000.0, c=500.0):
    return PinholeCamera(fx=f, fy=f, cx=c, cy=c, width=W, height=H)


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(0.0)
    with pytest.raises(ValueError):
        AugmentSpec(3.0)
    with pytest.raises(ValueError):
        AugmentSpec(1.0, "bicubic")
    assert AugmentSpec(3.0, s_max=4.0).s == 3.0
    assert (EVAL_ZOOM_IN, EVAL_ZOOM_OUT) == (0.25, 2.0)


def test_intrinsics_examples():
    cam = _cam()
    assert augment_intrinsics(cam, 1.0) == cam
    c2 = augment_intrinsics(cam, 2.0)
    assert offsets(1000, 1000, 2.0) == (-500.0, -500.0)
    assert (c2.fx, c2.cx, c2.width) == (500.0, 500.0, 1000)
    c4 = augment_intrinsics(cam, AugmentSpec(0.25))
    assert offsets(1000, 1000, 0.25)[0] == 375.0
    assert c4.cx == 500.0 and c4.fx == 4000.0 and c4.height == 1000


@given(st.floats(0.25, 2.0), st.floats(-1, 1), st.floats(-1, 1), st.floats(2, 10))
@settings(max_examples=100, deadline=None)
def test_projection_identity(s, x, y, z):
    R, t = look_at([0.2, 0.1, -3], [0, 0, 0])
    cam = PinholeCamera(fx=300, fy=280, cx=61, cy=47, width=120, height=90, R=R, t=t)
    aug = augment_intrinsics(cam, s)
    p = [x, y, z]
    a = project_point(cam, p)
    b = project_point(aug, p)
    dx, dy = offsets(120, 90, s)
    assert abs(b[0] - (a[0] - dx) / s) < 1e-9
    assert abs(b[1] - (a[1] - dy) / s) < 1e-9


def test_identity_scale_is_exact_copy(rng):
    img = rng.uniform(size=(20, 30, 4)).astype(np.float32)
    out = augment_image(img, 1.0)
    assert out.tobytes() == img.tobytes() and out is not img


def test_zoom_out_pads_then_box_downsamples(rng):
    img = rng.uniform(size=(40, 40, 3))
    out = augment_image(img, 2.0)
    assert out.shape == img.shape
    padded = np.zeros((80, 80, 3))
    padded[20:60, 20:60] = img
    ref = padded.reshape(40, 2, 40, 2, 3).mean(axis=(1, 3))
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_nearest_half_scale_pointwise(rng):
    img = rng.uniform(size=(32, 48, 3))
    out = augment_image(img, AugmentSpec(0.5, "nearest"))
    dx, dy = offsets(48, 32, 0.5)
    for y in range(32):
        for x in range(48):
            sx = int(np.floor(0.5 * (x + 0.5) + dx))
            sy = int(np.floor(0.5 * (y + 0.5) + dy))
            np.testing.assert_array_equal(out[y, x], img[sy, sx])


def test_bilinear_crop_matches_interpolation(rng):
    img = rng.uniform(size=(16, 16))
    out = augment_image(img, 0.5)
    # output pixel centre x + 0.5 maps to source 0.5 (x + 0.5) + 4; index = coordinate - 0.5
    ys, xs = np.mgrid[0:16, 0:16]
    src_x = 0.5 * (xs + 0.5) + 4 - 0.5
    src_y = 0.5 * (ys + 0.5) + 4 - 0.5
    x0, y0 = np.floor(src_x).astype(int), np.floor(src_y).astype(int)
    fx, fy = src_x - x0, src_y - y0
    ref = ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x0 + 1]
           + (1 - fx) * fy * img[y0 + 1, x0] + fx * fy * img[y0 + 1, x0 + 1])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_valid_mask():
    m = valid_mask(40, 40, 2.0)
    assert m.sum() == 20 * 20 and m[10:30, 10:30].all()
    assert valid_mask(40, 40, 0.5).all()


def test_rejects_bad_image():
    with pytest.raises(ValueError):
        augment_image(np.zeros((0, 4)), 0.5)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_render_consistency(s):
    scene = synth.sphere_scene(200, np.random.default_rng(0))
    cam = synth.orbit_cameras(1, 3.5, 256)[0]
    st_ = RenderSettings(force_omega=0.0)
    frame = render(scene, cam, settings=st_)
    direct = render(scene, augment_intrinsics(cam, s), settings=st_)
    warped = augment_image(frame.rgba(), s)
    if s == 1.0:
        assert warped.tobytes() == frame.rgba().tobytes()
        assert direct.rgba().tobytes() == frame.rgba().tobytes()
        return
    fg = ndimage.binary_erosion((direct.alpha > 0.99) & (warped[..., 3] > 0.99), iterations=2)
    assert psnr(direct.color, warped[..., :3], fg) >= 40.0


def test_manifest(tmp_path, rng):
    img = rng.uniform(size=(24, 32, 4))
    write_png(tmp_path / "a.png", img)
    save_camera(PinholeCamera(fx=40, fy=40, cx=16, cy=12, width=32, height=24), tmp_path / "a.json")
    (tmp_path / "m.json").write_text(json.dumps([{"image": "a.png", "camera": "a.json"}]))
    out = run_manifest(str(tmp_path / "m.json"), AugmentSpec(2.0), str(tmp_path / "out"))
    entries = json.loads(open(out).read())
    assert entries[0]["s"] == 2.0
    res = read_png(tmp_path / "out" / entries[0]["image"])
    assert res.shape == (24, 32, 4)
    cam = json.loads((tmp_path / "out" / entries[0]["camera"]).read_text())
    assert cam["fx"] == 20.0


def test_manifest_size_mismatch(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((10, 10, 3)))
    save_camera(PinholeCamera(fx=40, fy=40, cx=16, cy=12, width=32, height=24), tmp_path / "a.json")
    (tmp_path / "m.json").write_text(json.dumps([{"image": "a.png", "camera": "a.json"}]))
    with pytest.raises(ValueError, match="camera expects"):
        run_manifest(str(tmp_path / "m.json"), AugmentSpec(0.5), str(tmp_path / "out"))

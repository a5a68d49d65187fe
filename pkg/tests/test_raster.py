import numpy as np
import pytest

from mstsplat import quaternion as quat, synth
from mstsplat.camera import PinholeCamera, look_at
from mstsplat.io import straight_rgba
from mstsplat.raster import (
    RenderSettings,
    available_backends,
    get_backend,
    prepare,
    render,
    render_brute,
    set_backend,
    sort_surfels,
)
from mstsplat.scene import PoseOffsets, Scene, SkeletonPose


def _flat_scene(z, colors, alphas, ids=None, scale=1.0):
    """Fronto-parallel surfels on the optical axis with uniform colour and alpha."""
    n = len(z)
    low = np.zeros((n, 16, 16, 4))
    low[..., 3] = np.asarray(alphas)[:, None, None]
    return Scene(ids=np.arange(n) if ids is None else ids, mu=[[0, 0, zi] for zi in z],
                 scale=np.full((n, 2), scale), rot=np.tile([1.0, 0, 0, 0], (n, 1)),
                 sh=synth.sh_for_color(colors), tex_low=low, tex_high=np.zeros((n, 32, 32, 4)))


def _assert_frames_close(a, b, tol):
    for name in ("color", "alpha", "depth", "normal"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=tol, rtol=0, err_msg=name)


def test_settings_validation():
    with pytest.raises(ValueError):
        RenderSettings(alpha_cutoff=0)
    with pytest.raises(ValueError):
        RenderSettings(transmittance_floor=1)
    with pytest.raises(ValueError):
        RenderSettings(force_omega=1.5)
    with pytest.raises(ValueError):
        RenderSettings(thread_count=0)


def test_backend_switch():
    prev = get_backend()
    try:
        set_backend("python")
        assert get_backend() == "python"
        with pytest.raises(ValueError):
            set_backend("gpu")
    finally:
        set_backend(prev)
    assert "python" in available_backends()


def test_sort_examples(front_cam):
    s = _flat_scene([2.0, 1.0], [(1, 0, 0)] * 2, [1, 1])
    np.testing.assert_array_equal(sort_surfels(s, front_cam), [1, 0])
    s = _flat_scene([2.0, 2.0], [(1, 0, 0)] * 2, [1, 1], ids=[7, 3])
    np.testing.assert_array_equal(s.ids[sort_surfels(s, front_cam)], [3, 7])
    s = _flat_scene([2.0, -1.0], [(1, 0, 0)] * 2, [1, 1])
    np.testing.assert_array_equal(sort_surfels(s, front_cam), [0])


def test_single_opaque_surfel(front_cam, backend):
    s = _flat_scene([3.0], [(0.2, 0.4, 0.6)], [1.0], scale=5.0)
    f = render(s, front_cam, backend=backend)
    np.testing.assert_allclose(f.color[32, 32], (0.2, 0.4, 0.6), atol=1e-6)
    assert f.alpha[32, 32] == 1.0
    ray = front_cam.pixel_rays()[32, 32]
    assert f.depth[32, 32] == pytest.approx(3.0 / ray[2], rel=1e-9)
    np.testing.assert_allclose(f.normal[32, 32], (0, 0, -1))


def test_two_stacked_surfels(front_cam, backend):
    c1, c2 = np.array([0.9, 0.1, 0.3]), np.array([0.2, 0.7, 0.5])
    s = _flat_scene([3.0, 2.0], [c2, c1], [0.5, 0.5], scale=5.0)
    f = render(s, front_cam, backend=backend)
    np.testing.assert_allclose(f.color[10, 50], 0.5 * c1 + 0.25 * c2, atol=1e-6)
    assert f.alpha[10, 50] == pytest.approx(0.75)
    # PNG output is straight colour
    rgba = straight_rgba(f)
    np.testing.assert_allclose(rgba[10, 50, :3], (0.5 * c1 + 0.25 * c2) / 0.75, atol=1e-6)


def test_empty_scene(front_cam, backend):
    f = render(Scene.empty(), front_cam, backend=backend, settings=RenderSettings(record_hits=True))
    for buf in (f.color, f.alpha, f.depth, f.normal):
        assert not buf.any()
    assert f.per_pixel_hits.offsets[-1] == 0
    g = render_brute(Scene.empty(), front_cam)
    assert not g.color.any() and not g.alpha.any()


def test_alpha_cutoff_and_transmittance_floor(front_cam, backend):
    s = _flat_scene([2.0], [(1, 1, 1)], [0.5 / 255], scale=5.0)
    assert not render(s, front_cam, backend=backend).alpha.any()
    # an opaque front surfel stops the pixel before the back one is composited
    s = _flat_scene([2.0, 3.0], [(1, 0, 0), (0, 1, 0)], [1.0, 1.0], scale=5.0)
    f = render(s, front_cam, backend=backend, settings=RenderSettings(record_hits=True))
    assert f.per_pixel_hits.counts()[32 * 64 + 32] == 1


def test_one_surfel_hit_records_cover_exact_pixels(front_cam):
    s = _flat_scene([4.0], [(1, 1, 1)], [0.6], scale=0.5)
    f = render_brute(s, front_cam)
    hits = f.per_pixel_hits
    covered = hits.counts().reshape(64, 64) > 0
    # analytic coverage of the square [-0.5, 0.5]^2 at z = 4 by pixel-centre rays
    xs = (np.arange(64) + 0.5 - 32) / 80 * 4
    inside = (np.abs(xs[None, :]) <= 0.5) & (np.abs(xs[:, None]) <= 0.5)
    np.testing.assert_array_equal(covered, inside)
    assert hits.at(32, 32)[0][0] == 0
    assert hits.at(32, 32)[0][1] == pytest.approx(0.6, abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_backends_match_brute(seed, backend):
    rng = np.random.default_rng(seed)
    s = synth.random_scene(120, rng)
    cam = PinholeCamera(fx=110, fy=110, cx=48, cy=40, width=96, height=80)
    settings = RenderSettings(record_hits=True)
    a = render(s, cam, settings=settings, backend=backend)
    b = render_brute(s, cam, settings=settings)
    _assert_frames_close(a, b, 1e-6)
    ha, hb = a.per_pixel_hits, b.per_pixel_hits
    np.testing.assert_array_equal(ha.offsets, hb.offsets)
    np.testing.assert_array_equal(ha.surfel_ids, hb.surfel_ids)
    np.testing.assert_allclose(ha.weight, hb.weight, atol=1e-6)


@pytest.mark.skipif("compiled" not in available_backends(), reason="extension not built")
def test_compiled_and_python_agree(rng):
    s = synth.sphere_scene(80, rng)
    cam = synth.orbit_cameras(1, 3.0, 96)[0]
    a = render(s, cam, backend="compiled")
    b = render(s, cam, backend="python")
    _assert_frames_close(a, b, 1e-9)


def test_thread_and_tile_independence(rng):
    s = synth.sphere_scene(200, rng)
    cam = synth.orbit_cameras(1, 2.5, 100)[0]
    ref = render(s, cam, settings=RenderSettings(thread_count=1, tile_size=16))
    for threads, tile in ((4, 16), (8, 16), (1, 8), (3, 32), (2, 7)):
        f = render(s, cam, settings=RenderSettings(thread_count=threads, tile_size=tile))
        for name in ("color", "alpha", "depth", "normal"):
            assert getattr(f, name).tobytes() == getattr(ref, name).tobytes(), (threads, tile, name)


def test_rigid_equivariance(rng):
    s = synth.sphere_scene(60, rng)
    R0, t0 = look_at([0.3, 0.5, -3.0], [0, 0, 0])
    cam = PinholeCamera(fx=90, fy=90, cx=32, cy=32, width=64, height=64, R=R0, t=t0)
    G = quat.to_matrix(quat.normalize([0.9, 0.2, -0.3, 0.1]))
    g = np.array([0.4, -1.0, 2.0])
    pose = SkeletonPose(np.concatenate([G, g[:, None]], axis=1)[None])
    moved_cam = cam.with_pose(R0 @ G.T, t0 - R0 @ G.T @ g)
    a = render(s, cam)
    b = render(s, moved_cam, pose)
    for name in ("color", "alpha", "depth"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-5, rtol=0)
    # normals live in world space and turn with the scene
    np.testing.assert_allclose(a.normal @ G.T, b.normal, atol=1e-5, rtol=0)


def test_alpha_bounded_and_monotone(rng):
    cam = PinholeCamera(fx=80, fy=80, cx=24, cy=24, width=48, height=48)
    for seed in range(5):
        r = np.random.default_rng(seed)
        s = synth.random_scene(40, r, alpha_range=(0.1, 0.6))
        s.tex_high[:] = 0
        base = render(s, cam, settings=RenderSettings(force_omega=0.0))
        assert base.alpha.max() <= 1.0
        k = int(r.integers(len(s)))
        s.tex_low[k, ..., 3] += 0.2
        up = render(s, cam, settings=RenderSettings(force_omega=0.0))
        assert np.all(up.alpha >= base.alpha - 1e-12)


def test_dc_offset_enters_alpha(front_cam):
    s = _flat_scene([3.0], [(0.5, 0.5, 0.5)], [0.4], scale=5.0)
    off = PoseOffsets.zeros(1)
    off.dc[0] = 0.2
    f = render(s, front_cam, SkeletonPose.identity(1, off))
    assert f.alpha[32, 32] == pytest.approx(0.6, abs=1e-6)


def test_force_omega_limits(rng):
    s = synth.sphere_scene(40, rng)
    far = synth.orbit_cameras(1, 400.0, 64)[0]
    prep = prepare(s, far)
    assert prep.omega.max() <= 0.01
    a = render(s, far)
    b = render(s, far, settings=RenderSettings(force_omega=0.0))
    assert np.abs(a.color - b.color).max() <= 0.01
    near = synth.orbit_cameras(1, 1.3, 256, focal=2000.0)[0]
    assert prepare(s, near).omega.min() == 1.0
    c = render(s, near)
    d = render(s, near, settings=RenderSettings(force_omega=1.0))
    assert c.color.tobytes() == d.color.tobytes()


def test_expected_depth(front_cam):
    s = _flat_scene([3.0], [(1, 1, 1)], [0.5], scale=5.0)
    f = render(s, front_cam)
    ed = f.expected_depth()
    ray = front_cam.pixel_rays()[32, 32]
    assert ed[32, 32] == pytest.approx(3.0 / ray[2])
    assert f.rgba().shape == (64, 64, 4)

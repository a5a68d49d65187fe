"""Synthetic scenes and camera rigs for tests, benchmarks and the fitting demo."""

import numpy as np

from . import geometry
from . import quaternion as quat
from .camera import PinholeCamera, look_at
from .scene import TEX_HIGH_SIZE, TEX_LOW_SIZE, MultiScaleTexture, Scene, Surfel, initial_low_texture
from .shading import SH_C0


def random_rotations(n, rng):
    return quat.normalize(rng.normal(size=(n, 4)))


def smooth_field(rng, size, channels, n_waves=3, amplitude=1.0):
    """Sum of a few random low-frequency cosines on a size x size grid, roughly in [-amplitude, amplitude]."""
    y, x = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    out = np.zeros((size, size, channels))
    for c in range(channels):
        for _ in range(n_waves):
            kx, ky = rng.uniform(-2.5, 2.5, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            out[..., c] += np.cos(2 * np.pi * (kx * x + ky * y) + ph)
    return amplitude * out / n_waves


def fibonacci_sphere(n, radius=1.0):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return radius * np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], axis=1)


def sh_for_color(rgb):
    """SH coefficients whose DC term reproduces ``rgb`` in every direction."""
    sh = np.zeros((len(rgb), 4, 3))
    sh[:, 0, :] = np.asarray(rgb) / SH_C0
    return sh


def random_scene(n, rng, center=(0.0, 0.0, 4.0), spread=1.0, scale_range=(0.05, 0.3),
                 textured=True, alpha_range=(0.3, 1.0), joint_count=1):
    """Randomly placed and oriented surfels with random (not necessarily smooth) textures."""
    mu = np.asarray(center) + rng.uniform(-spread, spread, size=(n, 3))
    scale = rng.uniform(*scale_range, size=(n, 2))
    rot = random_rotations(n, rng)
    sh = rng.normal(scale=0.4, size=(n, 4, 3))
    sh[:, 0, :] = rng.uniform(0.2, 0.8, size=(n, 3)) / SH_C0
    low = np.zeros((n, TEX_LOW_SIZE, TEX_LOW_SIZE, 4))
    high = np.zeros((n, TEX_HIGH_SIZE, TEX_HIGH_SIZE, 4))
    if textured:
        low[..., :3] = rng.uniform(-0.3, 0.3, size=low[..., :3].shape)
        low[..., 3] = rng.uniform(*alpha_range, size=low[..., 3].shape)
        high[...] = rng.normal(scale=0.5, size=high.shape)
    else:
        low[:] = initial_low_texture()
    ids = rng.permutation(n * 3)[:n]
    return Scene(ids=ids, mu=mu, scale=scale, rot=rot, sh=sh, tex_low=low, tex_high=high,
                 joint_count=joint_count, metadata={"kind": "random", "n": int(n)})


def sphere_scene(n, rng, radius=1.0, surfel_scale=None, smooth=True, view_dependent=0.05,
                 high_amplitude=0.8, alpha_peak=0.98):
    """Surfels tiling a sphere, oriented outward, with smooth colour and soft alpha textures."""
    mu = fibonacci_sphere(n, radius)
    normals = mu / np.linalg.norm(mu, axis=1, keepdims=True)
    _, _, rot, _ = geometry.frames_from_normals(normals)
    if surfel_scale is None:
        surfel_scale = 1.6 * radius * np.sqrt(np.pi / n)
    scale = np.full((n, 2), surfel_scale)
    base = rng.uniform(0.25, 0.75, size=(n, 3))
    sh = sh_for_color(base)
    sh[:, 1:, :] = rng.normal(scale=view_dependent, size=(n, 3, 3))
    low = np.zeros((n, TEX_LOW_SIZE, TEX_LOW_SIZE, 4))
    high = np.zeros((n, TEX_HIGH_SIZE, TEX_HIGH_SIZE, 4))
    g = np.linspace(-1, 1, TEX_LOW_SIZE)
    rr = np.sqrt(g[:, None] ** 2 + g[None, :] ** 2)
    # opaque disc fading to zero at the border
    disc = alpha_peak * np.clip((1.05 - rr) / 0.35, 0.0, 1.0)
    for i in range(n):
        if smooth:
            low[i, ..., :3] = smooth_field(rng, TEX_LOW_SIZE, 3, amplitude=0.15)
            high[i, ..., :] = smooth_field(rng, TEX_HIGH_SIZE, 4, n_waves=4, amplitude=high_amplitude)
            high[i, ..., 3] *= 0.1
        low[i, ..., 3] = disc
    return Scene(ids=np.arange(n), mu=mu, scale=scale, rot=rot, sh=sh, tex_low=low, tex_high=high,
                 metadata={"kind": "sphere", "n": int(n), "radius": float(radius)})


def bench_scene(n=20000, seed=0, radius=1.0):
    """Large sphere scene for throughput measurements; textures are random but cheap to build."""
    rng = np.random.default_rng(seed)
    mu = fibonacci_sphere(n, radius)
    _, _, rot, _ = geometry.frames_from_normals(mu / radius)
    scale = np.full((n, 2), 1.6 * radius * np.sqrt(np.pi / n), dtype=np.float32)
    sh = sh_for_color(rng.uniform(0.2, 0.8, size=(n, 3)))
    g = np.linspace(-1, 1, TEX_LOW_SIZE)
    rr = np.sqrt(g[:, None] ** 2 + g[None, :] ** 2)
    tex = np.zeros((TEX_LOW_SIZE, TEX_LOW_SIZE, 4), dtype=np.float32)
    tex[..., 3] = 0.98 * np.clip((1.05 - rr) / 0.35, 0.0, 1.0)
    low = np.broadcast_to(tex, (n, TEX_LOW_SIZE, TEX_LOW_SIZE, 4)).copy()
    low[..., :3] = rng.uniform(-0.2, 0.2, size=(n, 1, 1, 3)).astype(np.float32)
    high = np.empty((n, TEX_HIGH_SIZE, TEX_HIGH_SIZE, 4), dtype=np.float32)
    high[:] = (0.3 * rng.standard_normal((TEX_HIGH_SIZE, TEX_HIGH_SIZE, 4))).astype(np.float32)
    return Scene(ids=np.arange(n), mu=mu, scale=scale, rot=rot, sh=sh, tex_low=low, tex_high=high,
                 metadata={"kind": "bench", "n": int(n)})


def orbit_cameras(n_views, distance, size, focal=None, elevation=0.3, target=(0.0, 0.0, 0.0), phase=0.0):
    """Cameras on a horizontal ring around ``target`` looking inward."""
    W = H = int(size)
    f = focal if focal is not None else 1.2 * W
    cams = []
    for k in range(n_views):
        ang = phase + 2 * np.pi * k / n_views
        eye = np.asarray(target) + distance * np.array([np.cos(ang) * np.cos(elevation), np.sin(elevation),
                                                        np.sin(ang) * np.cos(elevation)])
        R, t = look_at(eye, target)
        cams.append(PinholeCamera(fx=f, fy=f, cx=W / 2, cy=H / 2, width=W, height=H, R=R, t=t))
    return cams


def front_camera(size=64, distance=4.0, focal=None):
    W = H = int(size)
    f = focal if focal is not None else 1.2 * W
    return PinholeCamera(fx=f, fy=f, cx=W / 2, cy=H / 2, width=W, height=H,
                         R=np.eye(3), t=np.array([0.0, 0.0, distance - 4.0]))


def init_scene_from_points(points, surfel_scale=None, k=3, color=(0.5, 0.5, 0.5), metadata=None):
    """Fresh scene on a point set: frames from neighbours, zero high textures, bump-alpha low textures."""
    points = np.asarray(points, dtype=np.float64)
    frames = geometry.estimate_surfel_frames(points, k=k)
    n = len(points)
    if surfel_scale is None:
        nbr = geometry.knn(points, 1)[:, 0]
        surfel_scale = float(np.median(np.linalg.norm(points[nbr] - points, axis=1)))
    surfels = []
    sh = sh_for_color(np.tile(color, (n, 1)))
    for i, fr in enumerate(frames):
        surfels.append(Surfel(id=i, mu=points[i], scale=np.array([surfel_scale, surfel_scale]),
                              rot=fr.rot, sh=sh[i], tex=MultiScaleTexture.initial()))
    meta = {"kind": "init", "n": n, "k": k, "surfel_scale": float(surfel_scale),
            "degenerate_frames": int(sum(f.status == "degenerate-normal" for f in frames)),
            "fallback_up_frames": int(sum(f.status == "fallback-up" for f in frames))}
    meta.update(metadata or {})
    return Scene.from_surfels(surfels, metadata=meta)


def fit_problem(n=50, size=128, seed=0, scale_factor=1.0, views=8, distances=(2.5, 4.0),
                holdout_distance=3.0, holdout_phase=np.pi / 8):
    """Known textured scene, a fresh scene on the same points, training views and one held-out camera.

    Returns ``(init, truth, train, holdout)`` with ``train`` a list of ``(camera, image)``
    pairs rendered from ``truth``; ``holdout`` sits at a distance and azimuth absent from training.
    """
    from .raster import render
    rng = np.random.default_rng(seed)
    pts = fibonacci_sphere(n)
    scale = scale_factor * np.sqrt(np.pi / n)
    init = init_scene_from_points(pts, surfel_scale=scale)
    textured = sphere_scene(n, rng, surfel_scale=scale)
    truth = init.copy()
    truth.tex_low[:] = textured.tex_low
    truth.tex_high[:] = textured.tex_high
    truth.sh[:] = textured.sh
    truth.metadata = {**truth.metadata, "kind": "fit-truth"}
    train = []
    for d in distances:
        for cam in orbit_cameras(views, d, size):
            train.append((cam, render(truth, cam).color))
    holdout = orbit_cameras(1, holdout_distance, size, phase=holdout_phase)[0]
    return init, truth, train, holdout


def unclamped_scene(n, rng, center=(0.0, 0.0, 3.0), spread=0.4, scale_range=(0.3, 0.7)):
    """Random textured surfels whose shaded values stay clear of every clamp and cutoff.

    For any LOD weight in [0, 1]: base colours lie in [0.3, 0.7] and the offsets
    (view-dependent SH <= 0.043, low RGB <= 0.08, tanh of high <= 0.15) keep RGB
    within [0.02, 0.98]; alpha stays within [0.05, 0.85]. Gradient checks need this,
    since central differences are only meaningful away from the kinks.
    """
    s = random_scene(n, rng, center=center, spread=spread, scale_range=scale_range)
    h = np.arctanh(0.15)
    s.sh[:, 1:, :] = rng.uniform(-0.05, 0.05, size=(n, 3, 3))
    s.sh[:, 0, :] = rng.uniform(0.3, 0.7, size=(n, 3)) / SH_C0
    s.tex_low[..., :3] = rng.uniform(-0.08, 0.08, size=s.tex_low[..., :3].shape)
    s.tex_low[..., 3] = rng.uniform(0.2, 0.7, size=s.tex_low[..., 3].shape)
    s.tex_high[...] = rng.uniform(-h, h, size=s.tex_high.shape)
    s.metadata = {**s.metadata, "kind": "unclamped"}
    return s

"""Surfel frames, ray/surfel intersection, pinhole projection and screen-space radius."""

from dataclasses import dataclass

import numpy as np

from . import quaternion as quat

NEAR_EPS = 1e-4
PARALLEL_EPS = 1e-9
DEGENERATE_NORMAL_EPS = 1e-9
UP_PARALLEL_EPS = 1e-6
UP = np.array([0.0, 1.0, 0.0])
FALLBACK_UP = np.array([1.0, 0.0, 0.0])


@dataclass
class SurfelFrame:
    n: np.ndarray
    t: np.ndarray
    b: np.ndarray
    rot: np.ndarray
    status: str = "ok"  # "ok" | "fallback-up" | "degenerate-normal"


@dataclass
class Ray:
    origin: np.ndarray
    dir: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.dir = np.asarray(self.dir, dtype=np.float64)
        if abs(np.linalg.norm(self.dir) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")


def knn(points, k, chunk=1024):
    """Exact k nearest neighbours (excluding self) by brute force; ties broken by index."""
    p = np.asarray(points, dtype=np.float64)
    n = len(p)
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points, got {n}")
    sq = (p * p).sum(1)
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        blk = p[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * blk @ p.T
        rows = np.arange(len(blk))
        d2[rows, s + rows] = np.inf
        # exact distances for the candidate set, then stable ordering
        cand = np.argpartition(d2, k, axis=1)[:, :k + 1]
        exact = ((p[cand] - blk[:, None, :]) ** 2).sum(-1)
        exact[cand == (s + rows)[:, None]] = np.inf
        order = np.lexsort((cand, exact), axis=1)
        out[s:s + chunk] = np.take_along_axis(cand, order, 1)[:, :k]
    return out


def frames_from_normals(normals):
    """Tangent/binormal/quaternion for unit normals using the fixed up vector, with fallback."""
    nh = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    t = np.cross(UP, nh)
    tn = np.linalg.norm(t, axis=1)
    fallback = tn < UP_PARALLEL_EPS
    if fallback.any():
        t[fallback] = np.cross(FALLBACK_UP, nh[fallback])
        tn[fallback] = np.linalg.norm(t[fallback], axis=1)
    t /= tn[:, None]
    b = np.cross(nh, t)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    R = np.stack([t, b, nh], axis=2)
    return t, b, quat.from_matrix(R), fallback


def estimate_surfel_frames(positions, k=3):
    """Orient one surfel per point from its k nearest neighbours.

    The normal is the mean of cross products of consecutive neighbour edge vectors
    (cyclic). Points whose neighbourhood yields a vanishing normal get the identity
    frame and status ``"degenerate-normal"``; normals parallel to the up vector use
    the fallback up vector and status ``"fallback-up"``.
    """
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    nbr = knn(p, k)
    e = p[nbr] - p[:, None, :]
    n = np.cross(e, np.roll(e, -1, axis=1)).sum(1) / k
    nn = np.linalg.norm(n, axis=1)
    degenerate = nn < DEGENERATE_NORMAL_EPS
    nh = np.where(degenerate[:, None], np.array([0.0, 0.0, 1.0]), n / np.where(degenerate, 1.0, nn)[:, None])
    t, b, q, fallback = frames_from_normals(nh)
    frames = []
    for i in range(len(p)):
        if degenerate[i]:
            frames.append(SurfelFrame(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]),
                                      np.array([0.0, 1.0, 0.0]), quat.IDENTITY.copy(), "degenerate-normal"))
        else:
            frames.append(SurfelFrame(nh[i], t[i], b[i], q[i], "fallback-up" if fallback[i] else "ok"))
    return frames


def surfel_axes(rot):
    """World tangent, binormal and normal axes (each (..., 3)) of surfels with quaternions ``rot``."""
    R = quat.to_matrix(quat.normalize(rot))
    return R[..., 0], R[..., 1], R[..., 2]


def intersect_ray_surfel(ray, surfel):
    """Return ``(u, v, depth)`` where the ray crosses the surfel's unit square, else ``None``.

    ``(u, v)`` are local plane coordinates divided by the half-extents, ``depth`` is the
    distance along the (unit) ray.
    """
    t, b, n = surfel_axes(np.asarray(surfel.rot, dtype=np.float64))
    mu = np.asarray(surfel.mu, dtype=np.float64)
    denom = float(ray.dir @ n)
    if abs(denom) < PARALLEL_EPS:
        return None
    depth = float((mu - ray.origin) @ n) / denom
    if depth <= NEAR_EPS:
        return None
    d = ray.origin + depth * ray.dir - mu
    sx, sy = (float(v) for v in surfel.scale)
    if sx <= 0 or sy <= 0:
        return None
    u = float(d @ t) / sx
    v = float(d @ b) / sy
    if abs(u) > 1.0 or abs(v) > 1.0:
        return None
    return u, v, depth


def project_point(camera, p_world):
    """Pixel coordinates and camera depth of a world point, or ``None`` behind the near plane."""
    X, Y, Z = camera.world_to_cam(p_world)
    if Z <= NEAR_EPS:
        return None
    return camera.fx * X / Z + camera.cx, camera.fy * Y / Z + camera.cy, float(Z)


def surfel_corners(mu, rot, scale):
    """World positions of the four corners mu +/- t*s_x +/- b*s_y, shape (..., 4, 3)."""
    t, b, _ = surfel_axes(rot)
    scale = np.asarray(scale, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    tx = t * scale[..., 0:1]
    by = b * scale[..., 1:2]
    signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)
    return mu[..., None, :] + signs[:, 0, None] * tx[..., None, :] + signs[:, 1, None] * by[..., None, :]


def screen_radius(surfel, camera):
    """Radius in pixels of the circle around the projected centre enclosing the projected corners."""
    c = project_point(camera, surfel.mu)
    if c is None:
        return 0.0
    r = 0.0
    for corner in surfel_corners(surfel.mu, surfel.rot, surfel.scale):
        pc = project_point(camera, corner)
        if pc is not None:
            r = max(r, float(np.hypot(pc[0] - c[0], pc[1] - c[1])))
    return r


def screen_radii(mu, rot, scale, camera):
    """Vectorised :func:`screen_radius` over surfel arrays; 0 where the centre is behind the camera."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
    corners = surfel_corners(mu, rot, scale).reshape(-1, 4, 3)
    cc = camera.world_to_cam(mu)
    kc = camera.world_to_cam(corners)
    front_c = cc[:, 2] > NEAR_EPS
    front_k = kc[..., 2] > NEAR_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = camera.fx * cc[:, 0] / cc[:, 2] + camera.cx
        yc = camera.fy * cc[:, 1] / cc[:, 2] + camera.cy
        xk = camera.fx * kc[..., 0] / kc[..., 2] + camera.cx
        yk = camera.fy * kc[..., 1] / kc[..., 2] + camera.cy
        dist = np.hypot(xk - xc[:, None], yk - yc[:, None])
    dist = np.where(front_k, dist, 0.0)
    r = dist.max(axis=1)
    return np.where(front_c, r, 0.0)

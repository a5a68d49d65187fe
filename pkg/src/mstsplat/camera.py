"""Pinhole camera with OpenCV conventions (x right, y down, looking along +Z).

Continuous pixel coordinates place the centre of pixel ``(i, j)`` at ``(i + 0.5, j + 0.5)``,
so the image rectangle is ``[0, W] x [0, H]``.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def world_to_cam(self, p):
        return np.asarray(p, dtype=np.float64) @ self.R.T + self.t

    def cam_to_world(self, p):
        return (np.asarray(p, dtype=np.float64) - self.t) @ self.R

    def pixel_rays(self):
        """Unit world-space ray directions through every pixel centre, shape (H, W, 3)."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = xs[None, :]
        d[..., 1] = ys[:, None]
        d[..., 2] = 1.0
        d = d @ self.R  # R^T applied to row vectors
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def with_pose(self, R, t):
        return replace(self, R=R, t=t)

    def to_dict(self):
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "W": self.width, "H": self.height,
            "R": self.R.tolist(), "t": self.t.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        R = np.asarray(d.get("R", np.eye(3)), dtype=np.float64).reshape(3, 3)
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
                   width=int(d["W"]), height=int(d["H"]), R=R,
                   t=np.asarray(d.get("t", np.zeros(3)), dtype=np.float64))


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear towards the top of the image;
    with image y pointing down the camera's y axis is ``-up`` projected.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(-up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ eye


def load_camera(path):
    with open(path) as f:
        return PinholeCamera.from_dict(json.load(f))


def save_camera(camera, path):
    with open(path, "w") as f:
        json.dump(camera.to_dict(), f, indent=2)

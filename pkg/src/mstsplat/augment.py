"""Camera-distance augmentation: zoom a camera by a factor ``s`` while keeping W x H.

With ``dx = (W - s W) / 2`` the new intrinsics are ``f / s`` and ``(c - dx) / s``;
output continuous coordinate ``x`` looks at original coordinate ``s x + dx``. So
``s < 1`` crops the centre and enlarges it (a closer camera), ``s > 1`` pads with
transparent black and shrinks (a farther one).
"""

import json
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .camera import PinholeCamera, load_camera, save_camera
from .io import read_png, write_png

FILTERS = ("nearest", "bilinear")
S_MIN = 0.25
S_MAX = 2.0

# evaluation protocol: 25% central crop for zoom-in, 2x padding for zoom-out
EVAL_ZOOM_IN = 0.25
EVAL_ZOOM_OUT = 2.0


@dataclass(frozen=True)
class AugmentSpec:
    s: float
    filter: str = "bilinear"
    s_min: float = S_MIN
    s_max: float = S_MAX

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale factor must be positive, got {self.s}")
        if not self.s_min <= self.s <= self.s_max:
            raise ValueError(f"scale factor {self.s} outside [{self.s_min}, {self.s_max}]")
        if self.filter not in FILTERS:
            raise ValueError(f"unknown filter {self.filter!r}; expected one of {FILTERS}")


def _spec(spec):
    return spec if isinstance(spec, AugmentSpec) else AugmentSpec(float(spec))


def offsets(width, height, s):
    return (width - s * width) / 2.0, (height - s * height) / 2.0


def augment_intrinsics(cam: PinholeCamera, spec) -> PinholeCamera:
    spec = _spec(spec)
    s = spec.s
    if s == 1.0:
        return cam
    dx, dy = offsets(cam.width, cam.height, s)
    return replace(cam, fx=cam.fx / s, fy=cam.fy / s, cx=(cam.cx - dx) / s, cy=(cam.cy - dy) / s)


def source_coords(width, height, s):
    """Original continuous coordinates (x, y) seen by each output pixel centre, each (H, W)."""
    dx, dy = offsets(width, height, s)
    xs = s * (np.arange(width) + 0.5) + dx
    ys = s * (np.arange(height) + 0.5) + dy
    return np.broadcast_to(xs[None, :], (height, width)), np.broadcast_to(ys[:, None], (height, width))


def augment_image(img, spec):
    """Resample an (H, W) or (H, W, C) image; areas outside the source become zero.

    Bilinear sampling at ``s = 2`` lands exactly between 2x2 source blocks, which makes
    it a box downsample; ``s = 1`` returns an exact copy.
    """
    spec = _spec(spec)
    img = np.asarray(img)
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W[, C]) image, got shape {img.shape}")
    if spec.s == 1.0:
        return img.copy()
    H, W = img.shape[:2]
    X, Y = source_coords(W, H, spec.s)
    planes = img[..., None] if img.ndim == 2 else img
    out = np.zeros(planes.shape, dtype=np.float64)
    if spec.filter == "nearest":
        ix = np.floor(X).astype(np.int64)
        iy = np.floor(Y).astype(np.int64)
        ok = (ix >= 0) & (ix < W) & (iy >= 0) & (iy < H)
        out[ok] = planes[iy[ok], ix[ok]]
    else:
        # array index of a continuous coordinate is coordinate - 0.5
        coords = np.stack([Y - 0.5, X - 0.5])
        for c in range(planes.shape[2]):
            out[..., c] = ndimage.map_coordinates(planes[..., c].astype(np.float64), coords, order=1,
                                                  mode="constant", cval=0.0)
    out = out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)
    return out[..., 0] if img.ndim == 2 else out


def valid_mask(width, height, spec):
    """Output pixels whose source position lies inside the original image."""
    spec = _spec(spec)
    X, Y = source_coords(width, height, spec.s)
    return (X >= 0) & (X <= width) & (Y >= 0) & (Y <= height)


def augment_pair(img, cam, spec):
    spec = _spec(spec)
    return augment_image(img, spec), augment_intrinsics(cam, spec)


def run_manifest(manifest_path, spec, out_dir):
    """Augment every (image, camera) entry of a JSON manifest.

    The manifest is a list of ``{"image": path, "camera": path}``; relative paths are
    resolved against the manifest's directory. Writes the outputs plus a new manifest
    into ``out_dir`` and returns its path.
    """
    spec = _spec(spec)
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ValueError("manifest must be a JSON list of {image, camera} entries")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for k, e in enumerate(entries):
        if "image" not in e or "camera" not in e:
            raise ValueError(f"manifest entry {k} lacks 'image' or 'camera'")
        img = read_png(os.path.join(base, e["image"]))
        cam = load_camera(os.path.join(base, e["camera"]))
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"entry {k}: image is {img.shape[1]}x{img.shape[0]}, "
                             f"camera expects {cam.width}x{cam.height}")
        out_img, out_cam = augment_pair(img, cam, spec)
        stem = os.path.splitext(os.path.basename(e["image"]))[0]
        img_name = f"{k:04d}_{stem}_s{spec.s:g}.png"
        cam_name = f"{k:04d}_{stem}_s{spec.s:g}.json"
        write_png(os.path.join(out_dir, img_name), out_img)
        save_camera(out_cam, os.path.join(out_dir, cam_name))
        written.append({"image": img_name, "camera": cam_name, "s": spec.s})
    out_manifest = os.path.join(out_dir, "manifest.json")
    with open(out_manifest, "w") as f:
        json.dump(written, f, indent=1)
    return out_manifest

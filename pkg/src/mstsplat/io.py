"""Image files: 8-bit PNG via Pillow, and raw float32 frame dumps with a JSON sidecar."""

import json

import numpy as np
from PIL import Image


def read_png(path):
    """Float image in [0, 1] with shape (H, W, C), C in {1, 3, 4}."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


def to_uint8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img):
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def straight_rgba(frame):
    """Un-premultiplied RGBA from a frame's premultiplied colour and alpha buffers."""
    a = frame.alpha[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        rgb = np.where(a > 0, frame.color / a, 0.0)
    return np.concatenate([np.clip(rgb, 0.0, 1.0), frame.alpha[..., None]], axis=-1)


def save_raw(path, arrays):
    """Concatenate float32 arrays into ``path``; ``path + '.json'`` records names, shapes and offsets."""
    meta, offset = [], 0
    with open(path, "wb") as f:
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype=np.float32)
            f.write(a.tobytes())
            meta.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    with open(path + ".json", "w") as f:
        json.dump({"dtype": "float32", "byte_order": "little", "arrays": meta}, f, indent=1)


def load_raw(path):
    with open(path + ".json") as f:
        meta = json.load(f)
    data = np.fromfile(path, dtype="<f4")
    out = {}
    for m in meta["arrays"]:
        n = int(np.prod(m["shape"]))
        start = m["offset"] // 4
        out[m["name"]] = data[start:start + n].reshape(m["shape"])
    return out

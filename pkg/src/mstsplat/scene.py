"""Scene model: textured surfels, skeleton poses and the ``.mss`` scene file.

A :class:`Scene` stores its surfels as structure-of-arrays in float32 (the on-disk
precision), so serialization round-trips bit-exactly and renderers can hand the
arrays straight to the kernels. :class:`Surfel` is a per-element view for callers
that want one primitive at a time.

``.mss`` layout
---------------
UTF-8 JSON header (sorted keys) terminated by ``b"\\n\\0"``, followed by a
little-endian float32 blob with three sections in order:

1. ``records``   N x 30 floats: id, mu(3), scale(2), rot(4), sh(12, row-major 4x3),
   skin_joint(4), skin_weight(4)
2. ``tex_low``   N x S_L x S_L x 4 (row-major, RGBA interleaved)
3. ``tex_high``  N x S_H x S_H x 4
"""

import json
from dataclasses import dataclass, field

import numpy as np

TEX_LOW_SIZE = 16
TEX_HIGH_SIZE = 32
MAX_INFLUENCES = 4
RECORD_FIELDS = (
    ("id", 1),
    ("mu", 3),
    ("scale", 2),
    ("rot", 4),
    ("sh", 12),
    ("skin_joint", 4),
    ("skin_weight", 4),
)
RECORD_FLOATS = sum(n for _, n in RECORD_FIELDS)
HEADER_TERMINATOR = b"\n\0"
FORMAT_VERSION = 1

QUAT_TOL = 1e-6
SKIN_TOL = 1e-6
ROT_ORTHO_TOL = 1e-5
# ids travel through the float32 blob
MAX_ID = 2 ** 24


class SceneError(ValueError):
    """Raised for malformed scene files or scenes that violate their invariants."""


@dataclass(frozen=True)
class Diagnostic:
    surfel_id: int
    rule: str
    detail: str = ""

    def __str__(self):
        extra = f" ({self.detail})" if self.detail else ""
        return f"surfel {self.surfel_id}: {self.rule}{extra}"


@dataclass
class MultiScaleTexture:
    """Low level holds RGB offsets in [-1, 1] and alpha in [0, 1]; high level holds raw pre-tanh values."""
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def initial(cls, low_size=TEX_LOW_SIZE, high_size=TEX_HIGH_SIZE, peak=0.9, sigma=None):
        return cls(low=initial_low_texture(low_size, peak, sigma),
                   high=np.zeros((high_size, high_size, 4), dtype=np.float32))


@dataclass
class Surfel:
    id: int
    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    sh: np.ndarray
    tex: MultiScaleTexture
    skin: list = field(default_factory=lambda: [(0, 1.0)])


@dataclass
class PoseOffsets:
    """Per-surfel pose-dependent offsets, arrays indexed like the scene's surfels."""
    dx: np.ndarray
    dr: np.ndarray
    ds: np.ndarray
    dc: np.ndarray

    @classmethod
    def zeros(cls, n):
        dr = np.zeros((n, 4))
        dr[:, 0] = 1.0
        return cls(dx=np.zeros((n, 3)), dr=dr, ds=np.zeros((n, 2)), dc=np.zeros(n))

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64).reshape(-1, 3)
        self.dr = np.asarray(self.dr, dtype=np.float64).reshape(-1, 4)
        self.ds = np.asarray(self.ds, dtype=np.float64).reshape(-1, 2)
        self.dc = np.asarray(self.dc, dtype=np.float64).reshape(-1)

    def __len__(self):
        return len(self.dc)


@dataclass
class SkeletonPose:
    """Per-joint 3x4 affine transforms from canonical to posed space."""
    joints: np.ndarray
    offsets: PoseOffsets | None = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3, 4)

    @classmethod
    def identity(cls, joint_count, offsets=None):
        a = np.zeros((joint_count, 3, 4))
        a[:, :, :3] = np.eye(3)
        return cls(a, offsets)

    def check(self):
        """Return joint indices whose rotation part is not orthonormal within tolerance."""
        lin = self.joints[:, :, :3]
        err = np.abs(np.einsum("jik,jil->jkl", lin, lin) - np.eye(3)).max(axis=(1, 2))
        return [int(j) for j in np.nonzero(err > ROT_ORTHO_TOL)[0]]


class Scene:
    """Collection of textured surfels stored as float32 structure-of-arrays."""

    def __init__(self, ids, mu, scale, rot, sh, tex_low, tex_high, skin_joint=None,
                 skin_weight=None, joint_count=1, metadata=None):
        n = len(ids)
        self.ids = np.asarray(ids, dtype=np.int64).reshape(n)
        self.mu = np.ascontiguousarray(mu, dtype=np.float32).reshape(n, 3)
        self.scale = np.ascontiguousarray(scale, dtype=np.float32).reshape(n, 2)
        self.rot = np.ascontiguousarray(rot, dtype=np.float32).reshape(n, 4)
        self.sh = np.ascontiguousarray(sh, dtype=np.float32).reshape(n, 4, 3)
        tex_low = np.ascontiguousarray(tex_low, dtype=np.float32)
        tex_high = np.ascontiguousarray(tex_high, dtype=np.float32)
        if n == 0:
            tex_low = tex_low.reshape(0, TEX_LOW_SIZE, TEX_LOW_SIZE, 4) if tex_low.size == 0 else tex_low
            tex_high = tex_high.reshape(0, TEX_HIGH_SIZE, TEX_HIGH_SIZE, 4) if tex_high.size == 0 else tex_high
        if tex_low.ndim != 4 or tex_low.shape[0] != n or tex_low.shape[1] != tex_low.shape[2] or tex_low.shape[3] != 4:
            raise SceneError(f"tex_low must be (N, S, S, 4), got {tex_low.shape}")
        if tex_high.ndim != 4 or tex_high.shape[0] != n or tex_high.shape[1] != tex_high.shape[2] or tex_high.shape[3] != 4:
            raise SceneError(f"tex_high must be (N, S, S, 4), got {tex_high.shape}")
        self.tex_low = tex_low
        self.tex_high = tex_high
        if skin_joint is None:
            skin_joint = np.zeros((n, MAX_INFLUENCES), dtype=np.int32)
        if skin_weight is None:
            skin_weight = np.zeros((n, MAX_INFLUENCES), dtype=np.float32)
            skin_weight[:, 0] = 1.0
        self.skin_joint = np.ascontiguousarray(skin_joint, dtype=np.int32).reshape(n, MAX_INFLUENCES)
        self.skin_weight = np.ascontiguousarray(skin_weight, dtype=np.float32).reshape(n, MAX_INFLUENCES)
        self.joint_count = int(joint_count)
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.ids)

    @property
    def tex_low_size(self):
        return self.tex_low.shape[1]

    @property
    def tex_high_size(self):
        return self.tex_high.shape[1]

    def copy(self):
        return Scene(self.ids.copy(), self.mu.copy(), self.scale.copy(), self.rot.copy(),
                     self.sh.copy(), self.tex_low.copy(), self.tex_high.copy(),
                     self.skin_joint.copy(), self.skin_weight.copy(), self.joint_count,
                     json.loads(json.dumps(self.metadata)))

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        arrays = ("ids", "mu", "scale", "rot", "sh", "tex_low", "tex_high", "skin_joint", "skin_weight")
        return (self.joint_count == other.joint_count and self.metadata == other.metadata
                and all(getattr(self, a).shape == getattr(other, a).shape
                        and getattr(self, a).tobytes() == getattr(other, a).tobytes() for a in arrays))

    def surfel(self, i):
        skin = [(int(j), float(w)) for j, w in zip(self.skin_joint[i], self.skin_weight[i]) if w != 0]
        return Surfel(id=int(self.ids[i]), mu=self.mu[i].astype(np.float64),
                      scale=self.scale[i].astype(np.float64), rot=self.rot[i].astype(np.float64),
                      sh=self.sh[i].astype(np.float64),
                      tex=MultiScaleTexture(self.tex_low[i], self.tex_high[i]), skin=skin)

    @property
    def surfels(self):
        return [self.surfel(i) for i in range(len(self))]

    @classmethod
    def from_surfels(cls, surfels, joint_count=1, metadata=None,
                     low_size=TEX_LOW_SIZE, high_size=TEX_HIGH_SIZE):
        n = len(surfels)
        skin_joint = np.zeros((n, MAX_INFLUENCES), dtype=np.int32)
        skin_weight = np.zeros((n, MAX_INFLUENCES), dtype=np.float32)
        for i, s in enumerate(surfels):
            if len(s.skin) > MAX_INFLUENCES:
                raise SceneError(f"surfel {s.id}: more than {MAX_INFLUENCES} skin influences")
            for k, (j, w) in enumerate(s.skin):
                skin_joint[i, k] = j
                skin_weight[i, k] = w
        if n:
            tex_low = np.stack([s.tex.low for s in surfels])
            tex_high = np.stack([s.tex.high for s in surfels])
        else:
            tex_low = np.zeros((0, low_size, low_size, 4), np.float32)
            tex_high = np.zeros((0, high_size, high_size, 4), np.float32)
        return cls(ids=[s.id for s in surfels], mu=[s.mu for s in surfels] or np.zeros((0, 3)),
                   scale=[s.scale for s in surfels] or np.zeros((0, 2)),
                   rot=[s.rot for s in surfels] or np.zeros((0, 4)),
                   sh=[s.sh for s in surfels] or np.zeros((0, 4, 3)),
                   tex_low=tex_low, tex_high=tex_high, skin_joint=skin_joint,
                   skin_weight=skin_weight, joint_count=joint_count, metadata=metadata)

    @classmethod
    def empty(cls, joint_count=1, metadata=None):
        return cls.from_surfels([], joint_count=joint_count, metadata=metadata)


def initial_low_texture(size=TEX_LOW_SIZE, peak=0.9, sigma=None):
    """Low-level texture with zero RGB offsets and a centred Gaussian alpha bump."""
    sigma = size / 4.0 if sigma is None else sigma
    c = (size - 1) / 2.0
    i = np.arange(size) - c
    bump = peak * np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma ** 2))
    tex = np.zeros((size, size, 4), dtype=np.float32)
    tex[..., 3] = bump
    return tex


def validate_scene(scene):
    """Check every type invariant; returns a list of :class:`Diagnostic`, empty when valid."""
    diags = []
    ids = scene.ids

    def add(mask, rule, detail_fn):
        for i in np.nonzero(mask)[0]:
            diags.append(Diagnostic(int(ids[i]), rule, detail_fn(i)))

    finite = (np.isfinite(scene.mu).all(1) & np.isfinite(scene.scale).all(1)
              & np.isfinite(scene.rot).all(1) & np.isfinite(scene.sh).all((1, 2))
              & np.isfinite(scene.tex_low).all((1, 2, 3)) & np.isfinite(scene.tex_high).all((1, 2, 3))
              & np.isfinite(scene.skin_weight).all(1))
    add(~finite, "finite values", lambda i: "NaN or inf in surfel fields")

    qn = np.linalg.norm(scene.rot.astype(np.float64), axis=1)
    add(np.abs(qn - 1.0) > QUAT_TOL, "non-unit rotation", lambda i: f"|rot| = {qn[i]:.9g}")
    add((scene.scale <= 0).any(1), "scale components > 0",
        lambda i: f"scale = {scene.scale[i].tolist()}")

    if len(scene):
        lo = scene.tex_low
        add(((lo[..., 3] < 0) | (lo[..., 3] > 1)).any((1, 2)), "low alpha in [0, 1]", lambda i: "")
        add(((lo[..., :3] < -1) | (lo[..., :3] > 1)).any((1, 2, 3)), "low RGB in [-1, 1]", lambda i: "")

    add((scene.skin_weight < 0).any(1), "skin weights >= 0", lambda i: "")
    if scene.joint_count > 0:
        ws = scene.skin_weight.astype(np.float64).sum(1)
        add(np.abs(ws - 1.0) > SKIN_TOL, "weights sum to 1", lambda i: f"sum = {ws[i]:.9g}")
        used = scene.skin_weight != 0
        bad = (used & ((scene.skin_joint < 0) | (scene.skin_joint >= scene.joint_count))).any(1)
        add(bad, "joint index < joint_count", lambda i: f"joints = {scene.skin_joint[i].tolist()}")

    add((ids < 0) | (ids >= MAX_ID), "id in [0, 2^24)", lambda i: "")
    uniq, counts = np.unique(ids, return_counts=True)
    for dup in uniq[counts > 1]:
        diags.append(Diagnostic(int(dup), "unique id"))
    return diags


def _header(scene):
    n = len(scene)
    sl, shs = scene.tex_low_size, scene.tex_high_size
    per = RECORD_FLOATS + sl * sl * 4 + shs * shs * 4
    return {
        "format": "mss",
        "version": FORMAT_VERSION,
        "endianness": "little",
        "dtype": "float32",
        "surfel_count": n,
        "joint_count": scene.joint_count,
        "tex_low_size": sl,
        "tex_high_size": shs,
        "record_fields": [list(f) for f in RECORD_FIELDS],
        "sections": ["records", "tex_low", "tex_high"],
        "floats_per_surfel": per,
        "blob_bytes": n * per * 4,
        "metadata": scene.metadata,
    }


def floats_per_surfel(low_size=TEX_LOW_SIZE, high_size=TEX_HIGH_SIZE):
    return RECORD_FLOATS + 4 * (low_size ** 2 + high_size ** 2)


def _records(scene):
    n = len(scene)
    rec = np.empty((n, RECORD_FLOATS), dtype=np.float32)
    rec[:, 0] = scene.ids
    rec[:, 1:4] = scene.mu
    rec[:, 4:6] = scene.scale
    rec[:, 6:10] = scene.rot
    rec[:, 10:22] = scene.sh.reshape(n, 12)
    rec[:, 22:26] = scene.skin_joint
    rec[:, 26:30] = scene.skin_weight
    return rec


def encode_scene(scene):
    diags = validate_scene(scene)
    if diags:
        raise SceneError("invalid scene: " + "; ".join(str(d) for d in diags[:10]))
    header = json.dumps(_header(scene), sort_keys=True, separators=(",", ":")).encode("utf-8")
    le = np.dtype("<f4")
    parts = [header, HEADER_TERMINATOR,
             _records(scene).astype(le).tobytes(),
             scene.tex_low.astype(le).tobytes(),
             scene.tex_high.astype(le).tobytes()]
    return b"".join(parts)


def save_scene(scene, path):
    data = encode_scene(scene)
    with open(path, "wb") as f:
        f.write(data)


def read_header(data):
    end = data.find(HEADER_TERMINATOR)
    if end < 0:
        raise SceneError("missing header terminator")
    try:
        header = json.loads(data[:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SceneError(f"unreadable header: {exc}") from exc
    return header, end + len(HEADER_TERMINATOR)


def decode_scene(data):
    header, start = read_header(data)
    if header.get("format") != "mss" or header.get("endianness") != "little" or header.get("dtype") != "float32":
        raise SceneError("unsupported format tags")
    if [tuple(f) for f in header.get("record_fields", [])] != list(RECORD_FIELDS):
        raise SceneError("unsupported record field order")
    n = int(header["surfel_count"])
    sl, shs = int(header["tex_low_size"]), int(header["tex_high_size"])
    per = RECORD_FLOATS + 4 * (sl * sl + shs * shs)
    if int(header["floats_per_surfel"]) != per:
        raise SceneError(f"header floats_per_surfel={header['floats_per_surfel']} but layout gives {per}")
    expected = n * per * 4
    if int(header["blob_bytes"]) != expected:
        raise SceneError(f"header/blob size mismatch: blob_bytes={header['blob_bytes']}, layout gives {expected}")
    actual = len(data) - start
    if actual != expected:
        kind = "truncated blob" if actual < expected else "trailing bytes after blob"
        raise SceneError(f"{kind}: expected {expected} bytes, got {actual}")

    blob = np.frombuffer(data, dtype="<f4", offset=start).astype(np.float32)
    rec = blob[:n * RECORD_FLOATS].reshape(n, RECORD_FLOATS)
    off = n * RECORD_FLOATS
    low = blob[off:off + n * sl * sl * 4].reshape(n, sl, sl, 4)
    off += n * sl * sl * 4
    high = blob[off:off + n * shs * shs * 4].reshape(n, shs, shs, 4)
    scene = Scene(ids=rec[:, 0].astype(np.int64), mu=rec[:, 1:4], scale=rec[:, 4:6], rot=rec[:, 6:10],
                  sh=rec[:, 10:22].reshape(n, 4, 3), tex_low=low, tex_high=high,
                  skin_joint=rec[:, 22:26].astype(np.int32), skin_weight=rec[:, 26:30],
                  joint_count=int(header["joint_count"]), metadata=header.get("metadata", {}))
    if not np.array_equal(rec[:, 0], np.floor(rec[:, 0])):
        raise SceneError("non-integer surfel id in records")
    diags = validate_scene(scene)
    if diags:
        raise SceneError("; ".join(str(d) for d in diags[:10]))
    return scene


def load_scene(path):
    with open(path, "rb") as f:
        return decode_scene(f.read())


# -- pose and offset files ---------------------------------------------------

def load_pose(path, offsets=None):
    with open(path) as f:
        joints = json.load(f)
    pose = SkeletonPose(np.asarray(joints, dtype=np.float64), offsets)
    bad = pose.check()
    if bad:
        raise SceneError(f"pose joints {bad}: rotation part not orthonormal")
    return pose


def save_pose(pose, path):
    with open(path, "w") as f:
        json.dump(pose.joints.tolist(), f)


OFFSET_FIELDS = (("dx", 3), ("dr", 4), ("ds", 2), ("dc", 1))


def save_offsets(frames, surfel_ids, offsets, path):
    """Write per-frame offsets: ``path`` gets the float32 blob, ``path + '.json'`` the sidecar."""
    blob = np.stack([np.concatenate([o.dx, o.dr, o.ds, o.dc[:, None]], axis=1)
                     for o in offsets]).astype("<f4")
    with open(path, "wb") as f:
        f.write(blob.tobytes())
    sidecar = {"frames": [int(fr) for fr in frames], "surfel_ids": [int(s) for s in surfel_ids],
               "fields": [list(x) for x in OFFSET_FIELDS], "dtype": "float32", "endianness": "little"}
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f)


def load_offsets(path):
    """Return ``{frame: PoseOffsets}`` with surfels in sidecar order."""
    with open(str(path) + ".json") as f:
        side = json.load(f)
    nf, ns = len(side["frames"]), len(side["surfel_ids"])
    width = sum(n for _, n in OFFSET_FIELDS)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != nf * ns * width:
        raise SceneError(f"offset blob has {raw.size} floats, sidecar implies {nf * ns * width}")
    raw = raw.reshape(nf, ns, width).astype(np.float64)
    out = {}
    for k, fr in enumerate(side["frames"]):
        r = raw[k]
        dr = r[:, 3:7]
        if np.any(np.abs(np.linalg.norm(dr, axis=1) - 1.0) > 1e-5):
            raise SceneError(f"frame {fr}: non-unit offset rotation")
        out[int(fr)] = PoseOffsets(dx=r[:, 0:3], dr=dr, ds=r[:, 7:9], dc=r[:, 9])
    return out

"""Linear blend skinning of surfels and pose-dependent offsets."""

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .scene import Diagnostic

SCALE_FLOOR = 1e-4
SINGULAR_DET = 1e-8


@dataclass
class PosedSurfels:
    """World-space surfel geometry for one frame; textures stay with the scene."""
    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    dc: np.ndarray
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.mu)


def canonical(scene):
    n = len(scene)
    return PosedSurfels(mu=scene.mu.astype(np.float64), rot=scene.rot.astype(np.float64),
                        scale=scene.scale.astype(np.float64), dc=np.zeros(n))


def gram_schmidt(lin):
    """Orthonormalise the columns of (N, 3, 3) matrices in order; returns rotations and a singular mask."""
    lin = np.asarray(lin, dtype=np.float64)
    det = np.linalg.det(lin)
    singular = np.abs(det) < SINGULAR_DET
    c0, c1, c2 = lin[..., 0], lin[..., 1], lin[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        R = _orthonormal_columns(c0, c1, c2)
    R = np.where((det < 0)[:, None, None], R * np.array([1.0, 1.0, -1.0]), R)
    R[singular] = np.eye(3)
    return R, singular


def _orthonormal_columns(c0, c1, c2):
    e0 = c0 / np.linalg.norm(c0, axis=-1, keepdims=True)
    e1 = c1 - (c1 * e0).sum(-1, keepdims=True) * e0
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = c2 - (c2 * e0).sum(-1, keepdims=True) * e0 - (c2 * e1).sum(-1, keepdims=True) * e1
    e2 /= np.linalg.norm(e2, axis=-1, keepdims=True)
    return np.stack([e0, e1, e2], axis=-1)


def lbs_pose(scene, pose):
    """Pose canonical surfels with blended joint affines.

    Positions use ``mu + sum_j w_j (A_j mu - mu)``, which equals ``(sum_j w_j A_j) mu``
    for normalised weights and is bit-exact for identity joints. Surfel frames are
    rotated by the Gram-Schmidt rotation of the blended linear part; scale is unchanged.
    """
    if pose is None:
        return canonical(scene)
    n = len(scene)
    A = pose.joints
    if n and scene.skin_joint.max(initial=0) >= len(A):
        raise ValueError(f"pose has {len(A)} joints but skin references joint {scene.skin_joint.max()}")
    mu = scene.mu.astype(np.float64)
    w = scene.skin_weight.astype(np.float64)
    Aj = A[scene.skin_joint]  # (N, 4, 3, 4)
    lin_delta = Aj[..., :3] - np.eye(3)
    moved = np.einsum("nkij,nj->nki", lin_delta, mu) + Aj[..., 3]
    posed_mu = mu + np.einsum("nk,nki->ni", w, moved)
    lin = np.eye(3) + np.einsum("nk,nkij->nij", w, lin_delta)

    identity = np.all(lin == np.eye(3), axis=(1, 2))
    R, singular = gram_schmidt(lin)
    q_blend = quat.from_matrix(R)
    q_blend[identity] = quat.IDENTITY
    rot = quat.multiply(q_blend, scene.rot.astype(np.float64))
    diags = [Diagnostic(int(scene.ids[i]), "singular blended transform",
                        "identity rotation substituted") for i in np.nonzero(singular)[0]]
    out = PosedSurfels(mu=posed_mu, rot=rot, scale=scene.scale.astype(np.float64), dc=np.zeros(n),
                       diagnostics=diags)
    return out


def apply_offsets(posed, off):
    """Add pose-dependent offsets after posing; dc is carried through to shading."""
    if off is None:
        return posed
    if len(off) != len(posed):
        raise ValueError(f"offsets for {len(off)} surfels, scene has {len(posed)}")
    ident = np.all(off.dr == quat.IDENTITY, axis=1)
    rot = quat.multiply(off.dr, posed.rot)
    if not ident.all():
        rot[~ident] = quat.normalize(rot[~ident])
    return PosedSurfels(mu=posed.mu + off.dx, rot=rot,
                        scale=np.maximum(posed.scale + off.ds, SCALE_FLOOR),
                        dc=posed.dc + off.dc, diagnostics=list(posed.diagnostics))


def pose_scene(scene, pose=None):
    """Canonical scene -> posed geometry (LBS followed by the pose's offsets, if any)."""
    posed = lbs_pose(scene, pose)
    if pose is not None and pose.offsets is not None:
        posed = apply_offsets(posed, pose.offsets)
    return posed


def canonical_directions(scene, posed, dirs, index=None):
    """Rotate posed-space directions back into each surfel's canonical frame.

    SH colour is evaluated there, so it travels with the surfel under posing and is
    unchanged when scene and camera move rigidly together.
    """
    idx = slice(None) if index is None else index
    q = quat.multiply(posed.rot[idx], quat.conjugate(scene.rot[idx].astype(np.float64)))
    return quat.rotate(quat.conjugate(q), dirs)

"""Staged fitting loop.

Phases by step fraction: textures frozen first, then everything trainable, then SH
only. Colour-side groups use analytic gradients; geometry groups move only in
full-FD mode, where each element is differentiated numerically against the full loss.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from .. import quaternion as quat
from ..animation import SCALE_FLOOR
from ..augment import AugmentSpec, augment_image, augment_intrinsics, valid_mask
from ..raster import RenderSettings, render
from ..scene import PoseOffsets
from .adam import ParamGroupState, adam_step, lr_schedule, project_low_texture
from .config import COLOR_GROUPS, GEOMETRY_GROUPS, TEXTURE_GROUPS
from .grad import backward, with_offsets
from .losses import total_loss

log = logging.getLogger(__name__)

SCENE_PARAMS = ("tex_low", "tex_high", "sh", "mu", "rot", "scale")
OFFSET_PARAMS = ("dc", "dx", "dr", "ds")


class FitDiverged(RuntimeError):
    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class Sample:
    camera: object
    image: np.ndarray
    pose: object = None
    frame: int = 0
    mask: np.ndarray | None = None


@dataclass
class FitResult:
    scene: object
    offsets: dict
    log: list = field(default_factory=list)
    final_loss: float = float("nan")

    def pose_for(self, frame=0, pose=None):
        """Pose carrying the offsets learned for ``frame`` (needed to reproduce training renders)."""
        return with_offsets(self.scene, pose, self.offsets.get(frame))


def phase_at(step, cfg):
    """1: textures frozen, 2: all trainable, 3: SH only. Boundaries belong to the later phase."""
    if step >= cfg.boundary(1.0 - cfg.sh_only_frac):
        return 3
    if step < cfg.boundary(cfg.tex_freeze_frac):
        return 1
    return 2


def trainable_groups(phase, cfg):
    if phase == 3:
        return ("sh",)
    groups = ("sh", "dc") if phase == 1 else COLOR_GROUPS
    if cfg.full_fd:
        groups = groups + GEOMETRY_GROUPS
    return groups


def _augment(sample, rng, cfg):
    cam, img, mask = sample.camera, np.asarray(sample.image, dtype=np.float64), sample.mask
    if cfg.augment_prob > 0 and rng.random() < cfg.augment_prob:
        lo, hi = cfg.augment_range
        spec = AugmentSpec(float(rng.uniform(lo, hi)), "bilinear", s_min=lo, s_max=hi)
        valid = valid_mask(cam.width, cam.height, spec)
        if mask is not None:
            valid &= augment_image(np.asarray(mask, dtype=np.float64), AugmentSpec(spec.s, "nearest", lo, hi)) > 0.5
        return augment_intrinsics(cam, spec), augment_image(img, spec), valid
    return cam, img, mask


class _Fitter:
    def __init__(self, scene, dataset, cfg):
        if not dataset:
            raise ValueError("fit needs a non-empty dataset")
        self.cfg = cfg
        self.scene = scene.copy()
        self.dataset = list(dataset)
        self.rng = np.random.default_rng(cfg.seed)
        n = len(self.scene)
        self.offsets = {s.frame: PoseOffsets.zeros(n) for s in self.dataset}
        k = min(cfg.neighbor_k, max(n - 1, 0))
        self.neighbors = geometry.knn(self.scene.mu.astype(np.float64), k) if k > 0 else None
        # float64 masters for scene parameters stored as float32
        self.master = {g: getattr(self.scene, g).astype(np.float64) for g in SCENE_PARAMS}
        self.state = {g: ParamGroupState.like(self.master[g]) for g in SCENE_PARAMS}
        for f, off in self.offsets.items():
            for g in OFFSET_PARAMS:
                self.state[(g, f)] = ParamGroupState.like(getattr(off, g))
        self.settings = RenderSettings(record_hits=True, thread_count=cfg.thread_count)

    def loss(self, cam, img, pose, off, mask, step):
        frame = render(self.scene, cam, with_offsets(self.scene, pose, off), self.settings)
        val, bd = total_loss(frame, img, self.scene, step, self.cfg, cam, mask, off, self.neighbors)
        return frame, val, bd

    def fd_grad(self, group, off, evaluate):
        """Central differences of ``evaluate()`` for every element of a geometry group."""
        eps = self.cfg.fd_eps
        if group in SCENE_PARAMS:
            arr = getattr(self.scene, group)
        else:
            arr = getattr(off, group)
        g = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            p0 = arr[idx]
            arr[idx] = p0 + eps
            hi, fp = float(arr[idx]), evaluate()
            arr[idx] = p0 - eps
            lo, fm = float(arr[idx]), evaluate()
            arr[idx] = p0
            g[idx] = (fp - fm) / (hi - lo)
        return g

    def apply(self, group, grad, lr, off, frame_key):
        cfg = self.cfg
        if group in SCENE_PARAMS:
            st = self.state[group]
            project = project_low_texture if group == "tex_low" else None
            new, diag = adam_step(self.master[group], grad, st, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                                  project, group)
            if diag is None:
                if group == "rot":
                    new = quat.normalize(new)
                elif group == "scale":
                    new = np.maximum(new, SCALE_FLOOR)
                self.master[group] = new
                getattr(self.scene, group)[...] = new.astype(np.float32)
            return diag
        st = self.state[(group, frame_key)]
        new, diag = adam_step(getattr(off, group), grad, st, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                              None, group)
        if diag is None:
            if group == "dr":
                new = quat.normalize(new)
            getattr(off, group)[...] = new
        return diag

    def step(self, step, phase):
        cfg = self.cfg
        sample = self.dataset[int(self.rng.integers(len(self.dataset)))]
        cam, img, mask = _augment(sample, self.rng, cfg)
        off = self.offsets[sample.frame]
        frame, val, bd = self.loss(cam, img, sample.pose, off, mask, step)
        if not np.isfinite(val):
            raise FitDiverged(step, val)
        groups = trainable_groups(phase, cfg)
        lrs = lr_schedule(step, cfg)
        grads = {}
        if any(g in COLOR_GROUPS for g in groups):
            grads.update(backward(self.scene, cam, img, cfg, step, sample.pose, off, mask, self.settings,
                                  frame=frame).as_dict())
        if cfg.full_fd:
            evaluate = lambda: self.loss(cam, img, sample.pose, off, mask, step)[1]  # noqa: E731
            for g in groups:
                if g in GEOMETRY_GROUPS:
                    grads[g] = self.fd_grad(g, off, evaluate)
        diags = []
        for g in groups:
            if lrs[g] == 0:
                continue
            d = self.apply(g, grads[g], lrs[g], off, sample.frame)
            if d:
                diags.append(d)
        return bd, lrs, groups, diags


def fit(scene, dataset, cfg, log_path=None, callback=None):
    """Fit textures (and SH, dc, optionally geometry) of ``scene`` to ``dataset``.

    Returns a :class:`FitResult` with a new scene; the input scene is not modified.
    ``callback(step, fitter_scene, record)`` is called after each logged step.
    """
    fitter = _Fitter(scene, dataset, cfg)
    records = []
    sink = open(log_path, "w") if log_path else None
    try:
        phase = None
        loss = float("nan")
        for step in range(cfg.total_steps):
            p = phase_at(step, cfg)
            if p != phase:
                ev = {"event": "phase", "step": step, "phase": p, "trainable": list(trainable_groups(p, cfg))}
                records.append(ev)
                if sink:
                    sink.write(json.dumps(ev) + "\n")
                phase = p
            bd, lrs, groups, diags = fitter.step(step, p)
            loss = bd.total
            if step % cfg.log_every == 0 or step == cfg.total_steps - 1 or diags:
                rec = {"step": step, "phase": p, "loss": bd.total, "pixel_kind": bd.pixel_kind,
                       "terms": bd.terms, "weights": bd.weights, "ms_ssim": bd.ms_ssim_score,
                       "lr": {g: lrs[g] for g in groups}}
                if diags:
                    rec["diagnostics"] = diags
                records.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
                if callback:
                    callback(step, fitter.scene, rec)
    finally:
        if sink:
            sink.close()
    return FitResult(scene=fitter.scene, offsets=fitter.offsets, log=records, final_loss=loss)

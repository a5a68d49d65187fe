"""Fitting configuration, stored as a flat JSON object."""

import json
import math
from dataclasses import asdict, dataclass, field, fields

# parameter groups; only the first four have analytic gradients
COLOR_GROUPS = ("tex_low", "tex_high", "sh", "dc")
GEOMETRY_GROUPS = ("mu", "rot", "scale", "dx", "dr", "ds")
GROUPS = COLOR_GROUPS + GEOMETRY_GROUPS
TEXTURE_GROUPS = ("tex_low", "tex_high")

DEFAULT_LR = {
    "tex_low": 0.02,
    "tex_high": 0.03,
    "sh": 0.005,
    "dc": 0.001,
    "mu": 1e-4,
    "rot": 1e-3,
    "scale": 5e-5,
    "dx": 1e-4,
    "dr": 1e-3,
    "ds": 5e-5,
}


def _ref(k):
    # schedule points are defined on a 400K-step run
    return k / 400_000


@dataclass
class FitConfig:
    total_steps: int = 4000
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    lambda_ms_ssim: float = 0.2
    lambda_perceptual: float = 0.1
    lambda_c: float = 0.1
    lambda_s: float = 0.1
    lambda_n: float = 0.05
    lambda_d: float = 100.0
    pixel_switch_frac: float = _ref(7_000)
    tex_freeze_frac: float = _ref(5_000)
    sh_only_frac: float = _ref(20_000)
    norm_reg_start_frac: float = _ref(7_000)
    depth_reg_start_frac: float = _ref(3_000)
    neighbor_k: int = 4
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # straight-through stand-in for the MS-SSIM gradient in analytic mode
    ms_ssim_surrogate: bool = True
    full_fd: bool = False
    fd_eps: float = 1e-4
    augment_prob: float = 0.0
    augment_range: tuple = (0.25, 2.0)
    log_every: int = 1
    thread_count: int = 1

    def __post_init__(self):
        lr = dict(DEFAULT_LR)
        lr.update(self.lr or {})
        self.lr = lr
        self.augment_range = tuple(self.augment_range)
        self.validate()

    @property
    def gamma(self):
        return 0.01 ** (1.0 / self.total_steps)

    def boundary(self, frac):
        """First step at or past ``frac * total_steps``, immune to float rounding of the product."""
        return math.ceil(round(frac * self.total_steps, 6))

    def validate(self):
        if int(self.total_steps) != self.total_steps or self.total_steps < 1:
            raise ValueError("total_steps must be an integer >= 1")
        for name in ("pixel_switch_frac", "tex_freeze_frac", "sh_only_frac",
                     "norm_reg_start_frac", "depth_reg_start_frac", "augment_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("lambda_ms_ssim", "lambda_perceptual", "lambda_c", "lambda_s",
                     "lambda_n", "lambda_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        unknown = set(self.lr) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups in lr: {sorted(unknown)}")
        if any(v < 0 for v in self.lr.values()):
            raise ValueError("learning rates must be >= 0")
        if self.batch_size != 1:
            raise ValueError("only batch_size = 1 is supported")
        if self.neighbor_k < 1:
            raise ValueError("neighbor_k must be >= 1")
        if self.tex_freeze_frac > 1.0 - self.sh_only_frac:
            raise ValueError("texture freeze ends after the SH-only phase begins")
        lo, hi = self.augment_range
        if not 0 < lo <= hi:
            raise ValueError("augment_range must satisfy 0 < lo <= hi")

    def to_dict(self):
        d = asdict(self)
        d["augment_range"] = list(self.augment_range)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path):
    with open(path) as f:
        return FitConfig.from_dict(json.load(f))


def save_config(cfg, path):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)

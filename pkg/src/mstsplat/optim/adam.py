"""Adam with bias correction, per-group state and exponential learning-rate annealing."""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class ParamGroupState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    frozen: bool = False
    skipped: list = field(default_factory=list)

    @classmethod
    def like(cls, params):
        shape = np.shape(params)
        return cls(m=np.zeros(shape), v=np.zeros(shape))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, project=None, name="group"):
    """One bias-corrected Adam update; returns ``(new_params, diagnostic_or_None)``.

    ``params`` is returned unchanged (the same object) when the group is frozen or the
    gradient is not finite; in the latter case a diagnostic string is returned and
    the moments are left untouched.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.m.shape:
        raise ValueError(f"{name}: gradient shape {grads.shape} != parameter shape {state.m.shape}")
    if state.frozen:
        return params, None
    if not np.all(np.isfinite(grads)):
        msg = f"{name}: non-finite gradient at step {state.step}; update skipped"
        state.skipped.append(state.step)
        log.warning(msg)
        return params, msg
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    new = np.asarray(params, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
    if project is not None:
        new = project(new)
    return new, None


def project_low_texture(tex):
    """Clamp low-level RGB offsets to [-1, 1] and alpha to [0, 1]."""
    out = np.array(tex, dtype=np.float64)
    out[..., :3] = np.clip(out[..., :3], -1.0, 1.0)
    out[..., 3] = np.clip(out[..., 3], 0.0, 1.0)
    return out


def lr_schedule(step, cfg):
    """Per-group learning rate ``lr0 * gamma**step`` with ``gamma = 0.01**(1/M)``."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    decay = cfg.gamma ** step
    return {g: lr0 * decay for g, lr0 in cfg.lr.items()}

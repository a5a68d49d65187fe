from .adam import ParamGroupState, adam_step, lr_schedule, project_low_texture
from .config import FitConfig, load_config, save_config
from .fit import FitDiverged, FitResult, Sample, fit, phase_at, trainable_groups
from .grad import (
    GradCheckReport,
    Gradients,
    ParamHandle,
    backward,
    central_difference,
    fd_gradient,
    fd_texture_gradients,
    gradient_check,
    texel_coverage,
)
from .losses import (
    LossBreakdown,
    ms_ssim_term,
    pixel_kind,
    pixel_loss,
    pixel_loss_grad,
    reg_ctrl,
    reg_depth,
    reg_normal,
    reg_scale,
    total_loss,
)

__all__ = [
    "FitConfig",
    "FitDiverged",
    "FitResult",
    "GradCheckReport",
    "Gradients",
    "LossBreakdown",
    "ParamGroupState",
    "ParamHandle",
    "Sample",
    "adam_step",
    "backward",
    "central_difference",
    "fd_gradient",
    "fd_texture_gradients",
    "fit",
    "gradient_check",
    "load_config",
    "lr_schedule",
    "ms_ssim_term",
    "phase_at",
    "pixel_kind",
    "pixel_loss",
    "pixel_loss_grad",
    "project_low_texture",
    "reg_ctrl",
    "reg_depth",
    "reg_normal",
    "reg_scale",
    "save_config",
    "texel_coverage",
    "total_loss",
    "trainable_groups",
]

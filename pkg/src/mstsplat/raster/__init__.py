from .core import (
    HitRecords,
    RenderFrame,
    RenderSettings,
    available_backends,
    forward_prepared,
    get_backend,
    prepare,
    render,
    render_backward,
    set_backend,
    sort_surfels,
)
from .brute import render_brute

__all__ = [
    "HitRecords",
    "RenderFrame",
    "RenderSettings",
    "available_backends",
    "forward_prepared",
    "get_backend",
    "prepare",
    "render",
    "render_backward",
    "render_brute",
    "set_backend",
    "sort_surfels",
]

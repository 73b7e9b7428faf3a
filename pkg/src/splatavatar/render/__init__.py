from .backend import available_backends, current_backend, set_backend, use_backend
from .camera import Camera
from .splat import (
    BLUR,
    CUTOFF_SIGMA,
    GaussianCloud,
    Projection,
    RenderedFrame,
    export_turntable,
    gather_cloud,
    pixel_ranges,
    project,
    rasterize,
    render,
    render_backward,
    save_png,
    texel_skin_weights,
)

__all__ = [
    "BLUR",
    "CUTOFF_SIGMA",
    "Camera",
    "GaussianCloud",
    "Projection",
    "RenderedFrame",
    "available_backends",
    "current_backend",
    "export_turntable",
    "gather_cloud",
    "pixel_ranges",
    "project",
    "rasterize",
    "render",
    "render_backward",
    "save_png",
    "set_backend",
    "texel_skin_weights",
    "use_backend",
]

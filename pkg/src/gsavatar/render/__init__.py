from gsavatar.render.config import DEFAULT_CONFIG, RasterConfig
from gsavatar.render.projection import ProjectedGaussian, ProjectedScene, project_gaussian
from gsavatar.render.raster import (
    RenderAux,
    RenderContext,
    RenderGradients,
    render,
    render_backward,
)
from gsavatar.render.oracle import render_oracle, render_oracle_full, render_oracle_weights

__all__ = [
    "DEFAULT_CONFIG",
    "ProjectedGaussian",
    "ProjectedScene",
    "RasterConfig",
    "RenderAux",
    "RenderContext",
    "RenderGradients",
    "project_gaussian",
    "render",
    "render_backward",
    "render_oracle",
    "render_oracle_full",
    "render_oracle_weights",
]

from gsavatar.core.errors import ValidationError
from gsavatar.core.model import (
    PARAMS_PER_GAUSSIAN,
    Gaussian,
    GaussianModel,
    ResidualSet,
    apply_residuals,
    apply_residuals_backward,
    assemble_covariance,
    flatten_params,
    load_model_json,
    save_model_json,
    unflatten_params,
)
from gsavatar.core.camera import Camera, load_camera_json, look_at, orbit_camera, save_camera_json
from gsavatar.core.image import Image, load_image, load_png, resize_bilinear, save_image, save_png
from gsavatar.core.sh import eval_sh, eval_sh_batch, rgb_to_band0, sh_basis, sh_basis_grad

__all__ = [
    "PARAMS_PER_GAUSSIAN",
    "Camera",
    "Gaussian",
    "GaussianModel",
    "Image",
    "ResidualSet",
    "ValidationError",
    "apply_residuals",
    "apply_residuals_backward",
    "assemble_covariance",
    "eval_sh",
    "eval_sh_batch",
    "flatten_params",
    "load_camera_json",
    "load_image",
    "load_model_json",
    "load_png",
    "look_at",
    "orbit_camera",
    "resize_bilinear",
    "rgb_to_band0",
    "save_camera_json",
    "save_image",
    "save_model_json",
    "save_png",
    "sh_basis",
    "sh_basis_grad",
    "unflatten_params",
]

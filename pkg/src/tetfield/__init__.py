"""Radiance fields stored per tetrahedron of a proxy mesh, addressed by
barycentric coordinates, with deformation, boolean, blending, composition
and local-retraining edits."""

from .geometry import (MeshError, Ray, TetMesh, build_mesh, intersect_ray, intersect_rays,
                       locate_point, locate_points)
from .kernels import BACKEND
from .model import ImpostorModel, ModelConfig, load_model, save_model
from .rendering import Camera, Image, RenderOptions, psnr, render_image, render_ray
from .sampling import SamplerParams, sample_ray, sample_rays

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Camera", "Image", "ImpostorModel", "MeshError", "ModelConfig", "Ray",
    "RenderOptions", "SamplerParams", "TetMesh", "build_mesh", "intersect_ray", "intersect_rays",
    "load_model", "locate_point", "locate_points", "psnr", "render_image", "render_ray",
    "sample_ray", "sample_rays", "save_model",
]

"""Albedo recovery for aerial photogrammetric images.

Inverts a directional-sun plus Gaussian-sky shading model over a
photogrammetric mesh: ray-traced geometry buffers, a sun-sky ratio estimated
from lit/shadow pixel pairs, TV-refined penumbrae, and per-pixel division.
"""

__version__ = "0.1.0"

from .albedo import AlbedoResult, compose_shading, recover_albedo
from .calibration import PairFilterCriteria, PhiEstimate, estimate_phi, pair_phi
from .ephemeris import SunState, sun_position, sun_state
from .evaluation import change_detect, lmse, smse, temporal_consistency, warp_to_view
from .gbuffer import GBuffer, SkyModel, compute_buffers
from .refine import RefineParams, refine_visibility
from .render import generate_test_scene, relight, render_lambertian
from .scene_io import CameraView, GeoRef, RadianceImage, TriangleMesh, load_mesh, load_project
from .tracing import build_accel

__all__ = [
    "AlbedoResult", "CameraView", "GBuffer", "GeoRef", "PairFilterCriteria", "PhiEstimate",
    "RadianceImage", "RefineParams", "SkyModel", "SunState", "TriangleMesh", "build_accel",
    "change_detect", "compose_shading", "compute_buffers", "estimate_phi", "generate_test_scene",
    "lmse", "load_mesh", "load_project", "pair_phi", "recover_albedo", "refine_visibility",
    "relight", "render_lambertian", "smse", "sun_position", "sun_state", "temporal_consistency",
    "warp_to_view",
]

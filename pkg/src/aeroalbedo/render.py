"""Lambertian forward renderer under the sun + Gaussian-sky model.

Produces synthetic ground truth (albedo, depth, normal, sun visibility) and
relights recovered albedo. The model is the same one the inverse assumes:
``L = rho * psi_sun * (V_sun * S_sun + phi * S_sky)``, with no interreflection
and the Lambertian 1/pi folded into ``psi_sun``.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np

from .ephemeris import SunState
from .gbuffer import GBuffer, SkyModel, sky_shading, sun_shading, sun_visibility, trace_primary
from .scene_io import CameraView, RadianceImage, SceneError, TriangleMesh
from .tracing import AccelStructure, build_accel
from .tracing.sampling import disc_table, tangent_frames

DISC_SAMPLES = 64


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    mesh: TriangleMesh
    albedo: np.ndarray          # (m, 3) per triangle, in [0, 1]
    sun_radius_deg: float = 0.0

    def __post_init__(self):
        alb = np.asarray(self.albedo, dtype=np.float64).reshape(-1, 3)
        if len(alb) != self.mesh.n_triangles:
            raise SceneError("need one albedo per triangle")
        if np.any(alb < 0) or np.any(alb > 1):
            raise SceneError("albedo must lie in [0, 1]")
        object.__setattr__(self, "albedo", alb)

    def content_hash(self) -> str:
        h = hashlib.sha256(self.mesh.content_hash().encode())
        h.update(self.albedo.tobytes())
        h.update(repr(float(self.sun_radius_deg)).encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],        # bottom (z-)
    [4, 5, 6], [4, 6, 7],        # top (z+)
    [0, 1, 5], [0, 5, 4],        # south (y-)
    [1, 2, 6], [1, 6, 5],        # east (x+)
    [2, 3, 7], [2, 7, 6],        # north (y+)
    [3, 0, 4], [3, 4, 7],        # west (x-)
])


def _box_vertices(center, size):
    c, s = np.asarray(center, dtype=np.float64), np.asarray(size, dtype=np.float64) / 2
    lo, hi = c - s, c + s
    return np.array([
        [lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
        [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]], [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]],
    ])


def generate_test_scene(spec: dict) -> SyntheticScene:
    """Ground plane plus axis-aligned boxes.

    ``spec`` keys: ``ground`` ({extent: [xmin, xmax, ymin, ymax], z, albedo}),
    ``boxes`` (list of {center: [x, y, z], size: [sx, sy, sz], albedo}),
    optional ``sun_radius_deg``. A box center may be given as [x, y]; it is
    then seated on the ground.
    """
    ground = spec.get("ground", {})
    xmin, xmax, ymin, ymax = ground.get("extent", (-50.0, 50.0, -50.0, 50.0))
    gz = float(ground.get("z", 0.0))
    verts = [[xmin, ymin, gz], [xmax, ymin, gz], [xmax, ymax, gz], [xmin, ymax, gz]]
    tris = [[0, 1, 2], [0, 2, 3]]
    albedo = [ground.get("albedo", (0.4, 0.4, 0.4))] * 2
    for i, box in enumerate(spec.get("boxes", [])):
        size = np.asarray(box["size"], dtype=np.float64)
        if size.shape != (3,) or np.any(size <= 0):
            raise SceneError(f"box {i}: size must be three positive values")
        center = list(box["center"])
        if len(center) == 2:
            center.append(gz + size[2] / 2)
        center = np.asarray(center, dtype=np.float64)
        if center[2] - size[2] / 2 < gz - 1e-9:
            raise SceneError(f"box {i} extends below the ground plane")
        base = len(verts)
        verts.extend(_box_vertices(center, size).tolist())
        tris.extend((_BOX_FACES + base).tolist())
        albedo.extend([box.get("albedo", (0.5, 0.5, 0.5))] * 12)
    mesh = TriangleMesh(np.array(verts), np.array(tris))
    return SyntheticScene(mesh, np.array(albedo), float(spec.get("sun_radius_deg", 0.0)))


PRESETS = {
    "plane": {
        "ground": {"extent": [-60, 60, -60, 60], "albedo": [0.42, 0.40, 0.36]},
        "boxes": [],
    },
    "flat-ground": {
        "ground": {"extent": [-60, 60, -60, 60], "albedo": [0.42, 0.40, 0.36]},
        "boxes": [
            {"center": [-12, 8], "size": [14, 10, 8], "albedo": [0.55, 0.30, 0.25]},
            {"center": [14, -10], "size": [10, 16, 6], "albedo": [0.30, 0.45, 0.50]},
        ],
    },
    "low-rise": {
        "ground": {"extent": [-60, 60, -60, 60], "albedo": [0.42, 0.40, 0.36]},
        "boxes": [
            {"center": [-20, 14], "size": [12, 10, 9], "albedo": [0.58, 0.32, 0.26]},
            {"center": [4, 22], "size": [10, 8, 4], "albedo": [0.30, 0.46, 0.52]},
            {"center": [20, 2], "size": [9, 14, 10], "albedo": [0.52, 0.50, 0.44]},
            {"center": [-6, -12], "size": [14, 9, 6], "albedo": [0.24, 0.30, 0.22]},
            {"center": [16, -22], "size": [8, 8, 3], "albedo": [0.60, 0.56, 0.34]},
        ],
    },
}


def preset_scene(name: str, sun_radius_deg: float = 0.0) -> SyntheticScene:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    spec = dict(PRESETS[name], sun_radius_deg=sun_radius_deg)
    return generate_test_scene(spec)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RenderResult:
    image: RadianceImage
    albedo: np.ndarray        # (H, W, 3); 0 on background
    visibility: np.ndarray    # continuous sun visibility (H, W)
    gbuffer: GBuffer          # binary v_sun, s_sun, s_sky as the inverse computes them

    @property
    def depth(self):
        return self.gbuffer.depth

    @property
    def normal(self):
        return self.gbuffer.normal

    @property
    def hit(self):
        return self.gbuffer.hit


def disc_visibility(gb: GBuffer, accel: AccelStructure, sun_dir, radius_deg: float,
                    n_samples: int = DISC_SAMPLES, n_threads=None) -> np.ndarray:
    """Visible fraction of a sun disc of the given angular radius."""
    sun_dir = np.asarray(sun_dir, dtype=np.float64)
    out = np.zeros(gb.shape)
    if not gb.hit.any():
        return out
    x, y = disc_table(n_samples)
    t, b = tangent_frames(sun_dir[None, :])
    r = np.hypot(x, y)
    gamma = r * np.deg2rad(radius_deg)
    with np.errstate(invalid="ignore", divide="ignore"):
        cx, cy = np.where(r > 0, x / r, 0.0), np.where(r > 0, y / r, 0.0)
    dirs = (np.cos(gamma)[:, None] * sun_dir
            + np.sin(gamma)[:, None] * (cx[:, None] * t[0] + cy[:, None] * b[0]))
    pos = gb.position[gb.hit] + gb.normal[gb.hit] * accel.offset
    nrm = gb.normal[gb.hit]
    vis = np.zeros(len(pos))
    for d in dirs:
        facing = (nrm @ d > 0.0) & (d[2] > 0.0)
        if not facing.any():
            continue
        occ = accel.occluded(pos[facing], np.broadcast_to(d, (int(facing.sum()), 3)), n_threads=n_threads)
        vis[np.flatnonzero(facing)[~occ]] += 1.0
    out[gb.hit] = vis / len(dirs)
    return out


def shade(albedo, psi, visibility, s_sun, phi, s_sky) -> np.ndarray:
    """Radiance from the sun + sky model; NaN-free (non-finite inputs give 0)."""
    psi = np.asarray(psi, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    shading = psi * (np.nan_to_num(visibility * s_sun)[..., None] + phi * np.nan_to_num(s_sky)[..., None])
    return np.asarray(albedo, dtype=np.float64) * shading


def render_lambertian(scene: SyntheticScene, camera: CameraView, sun: SunState, sky: SkyModel,
                      accel: AccelStructure | None = None, n_threads=None) -> RenderResult:
    accel = accel or build_accel(scene.mesh)
    gb = trace_primary(camera, accel, n_threads)
    v_bin = sun_visibility(gb, accel, sun.direction, n_threads)
    s_sun = sun_shading(gb, sun.direction)
    s_sky = sky_shading(gb, accel, sun.direction, sky, n_threads)
    if scene.sun_radius_deg > 0 and sun.above_horizon:
        vis = disc_visibility(gb, accel, sun.direction, scene.sun_radius_deg, n_threads=n_threads)
    else:
        vis = v_bin
    albedo = np.zeros(gb.shape + (3,))
    albedo[gb.hit] = scene.albedo[gb.triangle[gb.hit]]
    radiance = shade(albedo, sun.psi, vis, s_sun, sky.phi, s_sky)
    gb = gb.replace(v_sun=v_bin, s_sun=s_sun, s_sky=s_sky)
    return RenderResult(RadianceImage(radiance), albedo, vis, gb)


def relight(albedo, camera: CameraView, accel: AccelStructure, sun: SunState, sky: SkyModel,
            ambient_only: bool = False, gbuffer: GBuffer | None = None, n_threads=None) -> RadianceImage:
    """Render recovered albedo under new lighting.

    ``ambient_only`` drops the direct sun term and lights with a homogeneous
    dome (G = 1) of the same ``phi``, so no sun-centred sky lobe remains.
    """
    rho = albedo.pixels if isinstance(albedo, RadianceImage) else np.asarray(albedo, dtype=np.float64)
    gb = gbuffer if gbuffer is not None else trace_primary(camera, accel, n_threads)
    if ambient_only:
        sky = dataclasses.replace(sky, sigma=np.inf)
    s_sky = sky_shading(gb, accel, sun.direction, sky, n_threads)
    if ambient_only:
        vis = np.zeros(gb.shape)
        s_sun = np.zeros(gb.shape)
    else:
        vis = sun_visibility(gb, accel, sun.direction, n_threads)
        s_sun = sun_shading(gb, sun.direction)
    out = shade(np.where(gb.hit[..., None], rho, 0.0), sun.psi, vis, s_sun, sky.phi, s_sky)
    return RadianceImage(out)

"""Per-view geometry buffers: primary hits, sun visibility and shading terms."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene_io import CameraView, read_pfm, write_pfm
from .tracing import AccelStructure, default_threads, kernels
from .tracing.sampling import hemisphere_table, pixel_streams, tangent_frames


@dataclass(frozen=True, eq=False)
class SkyModel:
    """Gaussian sky dome around the sun.

    ``phi`` is the sky-to-sun intensity ratio per channel. ``sigma`` is the
    angular width in radians; ``np.inf`` gives a uniform dome (G = 1).
    """

    phi: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    sigma: float = np.deg2rad(45.0)
    n_samples: int = 1024
    seed: int = 0

    def __post_init__(self):
        phi = np.broadcast_to(np.asarray(self.phi, dtype=np.float64), (3,)).copy()
        if not np.all(np.isfinite(phi)) or np.any(phi < 0):
            raise ValueError("phi must be finite and non-negative")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be >= 1")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "n_samples", int(self.n_samples))

    def with_phi(self, phi) -> "SkyModel":
        return dataclasses.replace(self, phi=phi)

    def gaussian(self, angle):
        """Peak-normalized dome weight for an angular distance (radians) from the sun."""
        if np.isinf(self.sigma):
            return np.ones_like(np.asarray(angle, dtype=np.float64))
        return np.exp(-np.asarray(angle) ** 2 / (2.0 * self.sigma ** 2))


@dataclass(frozen=True, eq=False)
class GBuffer:
    """Per-pixel buffers; float channels are NaN where ``hit`` is False."""

    hit: np.ndarray
    depth: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    triangle: np.ndarray
    v_sun: np.ndarray | None = None
    s_sun: np.ndarray | None = None
    s_sky: np.ndarray | None = None
    alpha: np.ndarray | None = None

    @property
    def shape(self):
        return self.hit.shape

    def replace(self, **changes) -> "GBuffer":
        return dataclasses.replace(self, **changes)

    @property
    def visibility(self) -> np.ndarray:
        """Refined sun visibility when present, otherwise the binary one."""
        return self.alpha if self.alpha is not None else self.v_sun


def trace_primary(camera: CameraView, accel: AccelStructure, n_threads=None) -> GBuffer:
    dirs, cos_z = camera.world_rays()
    h, w = camera.shape
    origins = np.broadcast_to(camera.center, (h * w, 3))
    t, tri = accel.intersect(origins, dirs.reshape(-1, 3), n_threads=n_threads)
    t, tri = t.reshape(h, w), tri.reshape(h, w)
    hit = tri >= 0

    depth = np.full((h, w), np.nan)
    depth[hit] = t[hit] * cos_z[hit]
    position = np.full((h, w, 3), np.nan)
    position[hit] = camera.center + dirs[hit] * t[hit, None]
    normal = np.full((h, w, 3), np.nan)
    n = accel.mesh.normals[tri[hit]]
    flip = np.einsum("ij,ij->i", n, dirs[hit]) > 0.0
    n[flip] *= -1.0
    normal[hit] = n
    return GBuffer(hit=hit, depth=depth, position=position, normal=normal, triangle=tri)


def _shadow_origins(gb: GBuffer, accel: AccelStructure):
    return gb.position[gb.hit] + gb.normal[gb.hit] * accel.offset


def sun_visibility(gb: GBuffer, accel: AccelStructure, sun_dir, n_threads=None) -> np.ndarray:
    """Binary sun visibility; 0 everywhere when the sun is at or below the horizon."""
    sun_dir = np.asarray(sun_dir, dtype=np.float64)
    out = np.zeros(gb.shape)
    if sun_dir[2] <= 0.0 or not gb.hit.any():
        return out
    origins = _shadow_origins(gb, accel)
    dirs = np.broadcast_to(sun_dir, origins.shape)
    occ = accel.occluded(origins, dirs, n_threads=n_threads)
    out[gb.hit] = np.where(occ, 0.0, 1.0)
    return out


def sun_shading(gb: GBuffer, sun_dir) -> np.ndarray:
    s = np.einsum("hwc,c->hw", gb.normal, np.asarray(sun_dir, dtype=np.float64))
    return np.where(gb.hit, np.maximum(s, 0.0), np.nan)


def sky_shading(gb: GBuffer, accel: AccelStructure, sun_dir, sky: SkyModel, n_threads=None) -> np.ndarray:
    """Cosine-weighted Monte Carlo estimate of the occluded Gaussian-dome integral.

    Directions below the horizon (z <= 0) carry no skylight.
    """
    h, w = gb.shape
    out = np.full((h, w), np.nan)
    if not gb.hit.any():
        return out
    ids = np.flatnonzero(gb.hit.ravel()).astype(np.uint64)
    normals = np.ascontiguousarray(gb.normal[gb.hit])
    tan, bit = tangent_frames(normals)
    shift, cb, sb = pixel_streams(sky.seed, ids)
    u, cphi, sphi = hemisphere_table(sky.n_samples)
    inv2s2 = 0.0 if np.isinf(sky.sigma) else 1.0 / (2.0 * sky.sigma ** 2)
    acc = kernels().sky_integral(
        accel.bvh, np.ascontiguousarray(_shadow_origins(gb, accel)), normals, tan, bit,
        shift, cb, sb, u, cphi, sphi, np.asarray(sun_dir, dtype=np.float64), inv2s2,
        n_threads or default_threads(),
    )
    out[gb.hit] = acc * (np.pi / sky.n_samples)
    return out


def compute_buffers(camera: CameraView, accel: AccelStructure, sun_dir, sky: SkyModel, n_threads=None) -> GBuffer:
    """Primary hits plus binary visibility and both shading terms."""
    gb = trace_primary(camera, accel, n_threads)
    return gb.replace(
        v_sun=sun_visibility(gb, accel, sun_dir, n_threads),
        s_sun=sun_shading(gb, sun_dir),
        s_sky=sky_shading(gb, accel, sun_dir, sky, n_threads),
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

GBUFFER_FILES = ("hit.pfm", "depth.pfm", "normal.pfm", "alpha0.pfm", "s_sun.pfm", "s_sky.pfm")


def write_gbuffer(gb: GBuffer, directory) -> list:
    """Write buffers as PFM. No-hit pixels are stored as 0; normals as 0.5 * (n + 1)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    hit = gb.hit
    normal = np.where(hit[..., None], 0.5 * (np.nan_to_num(gb.normal) + 1.0), 0.0)
    chans = {
        "hit.pfm": hit.astype(np.float32),
        "depth.pfm": np.where(hit, gb.depth, 0.0),
        "normal.pfm": normal,
        "alpha0.pfm": np.where(hit, gb.v_sun, 0.0),
        "s_sun.pfm": np.where(hit, gb.s_sun, 0.0),
        "s_sky.pfm": np.where(hit, gb.s_sky, 0.0),
    }
    paths = []
    for name, arr in chans.items():
        write_pfm(d / name, arr)
        paths.append(d / name)
    return paths


def read_gbuffer(directory, camera: CameraView) -> GBuffer:
    d = Path(directory)
    hit = read_pfm(d / "hit.pfm") > 0.5
    depth = np.where(hit, read_pfm(d / "depth.pfm").astype(np.float64), np.nan)
    n = 2.0 * read_pfm(d / "normal.pfm").astype(np.float64) - 1.0
    n /= np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
    normal = np.where(hit[..., None], n, np.nan)
    position = np.where(hit[..., None], camera.unproject(np.nan_to_num(depth)), np.nan)

    def chan(name):
        return np.where(hit, read_pfm(d / name).astype(np.float64), np.nan)

    return GBuffer(
        hit=hit, depth=depth, position=position, normal=normal,
        triangle=np.where(hit, 0, -1),
        v_sun=np.where(hit, read_pfm(d / "alpha0.pfm").astype(np.float64), 0.0),
        s_sun=chan("s_sun.pfm"), s_sky=chan("s_sky.pfm"),
    )

"""Per-view inversion of the sun + sky shading model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gbuffer import GBuffer
from .scene_io import RadianceImage


class AlbedoError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AlbedoResult:
    albedo: RadianceImage
    shading: RadianceImage
    valid: np.ndarray

    @property
    def shape(self):
        return self.valid.shape


def compose_shading(gb: GBuffer, phi, psi, alpha=None) -> np.ndarray:
    """``psi * (alpha * S_sun + phi * S_sky)`` per channel; 0 on non-hit pixels.

    ``alpha`` defaults to the G-buffer's refined visibility, else its binary one.
    """
    if phi is None:
        raise AlbedoError("sun-sky ratio missing")
    vis = gb.visibility if alpha is None else np.asarray(alpha, dtype=np.float64)
    if vis is None or gb.s_sun is None or gb.s_sky is None:
        raise AlbedoError("G-buffer lacks visibility or shading terms")
    psi = np.broadcast_to(np.asarray(psi, dtype=np.float64), (3,))
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (3,))
    s_sun = np.where(gb.hit, np.nan_to_num(gb.s_sun), 0.0)
    s_sky = np.where(gb.hit, np.nan_to_num(gb.s_sky), 0.0)
    vis = np.where(gb.hit, np.nan_to_num(vis), 0.0)
    return psi * ((vis * s_sun)[..., None] + phi * s_sky[..., None])


def recover_albedo(radiance, gb: GBuffer, phi, psi=(1.0, 1.0, 1.0), alpha=None,
                   floor: float = 1e-3) -> AlbedoResult:
    """``rho = L / shading`` where the shading is above ``floor * max(shading)``.

    Elsewhere (and on non-hit pixels) the input radiance passes through and
    the pixel is marked invalid.
    """
    L = radiance.pixels if isinstance(radiance, RadianceImage) else np.asarray(radiance)
    L = L.astype(np.float64)
    if L.shape[:2] != gb.shape or L.ndim != 3 or L.shape[2] != 3:
        raise AlbedoError(f"dimension mismatch: radiance {L.shape}, buffers {gb.shape}")
    if alpha is not None and np.shape(alpha) != gb.shape:
        raise AlbedoError("dimension mismatch: alpha")
    if np.any(np.asarray(psi, dtype=np.float64) <= 0):
        raise AlbedoError("psi_sun must be > 0")
    shading = compose_shading(gb, phi, psi, alpha)
    smax = float(shading[gb.hit].max()) if gb.hit.any() else 0.0
    thresh = floor * smax
    valid = gb.hit & np.all(shading > thresh, axis=-1) & (smax > 0)
    rho = L.copy()
    rho[valid] = L[valid] / shading[valid]
    return AlbedoResult(RadianceImage(rho), RadianceImage(shading), valid)

"""Hemisphere sample tables and per-pixel decorrelation streams.

Both tracing backends consume these arrays verbatim, so sampling is
bit-identical between them and independent of thread scheduling.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x) -> np.ndarray:
    z = np.atleast_1d(np.asarray(x, dtype=np.uint64)) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _unit_float(z) -> np.ndarray:
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def radical_inverse2(i) -> np.ndarray:
    """Van der Corput radical inverse in base 2."""
    x = np.asarray(i, dtype=np.uint64).copy()
    x = ((x >> np.uint64(1)) & np.uint64(0x5555555555555555)) | ((x & np.uint64(0x5555555555555555)) << np.uint64(1))
    x = ((x >> np.uint64(2)) & np.uint64(0x3333333333333333)) | ((x & np.uint64(0x3333333333333333)) << np.uint64(2))
    x = ((x >> np.uint64(4)) & np.uint64(0x0F0F0F0F0F0F0F0F)) | ((x & np.uint64(0x0F0F0F0F0F0F0F0F)) << np.uint64(4))
    x = ((x >> np.uint64(8)) & np.uint64(0x00FF00FF00FF00FF)) | ((x & np.uint64(0x00FF00FF00FF00FF)) << np.uint64(8))
    x = ((x >> np.uint64(16)) & np.uint64(0x0000FFFF0000FFFF)) | ((x & np.uint64(0x0000FFFF0000FFFF)) << np.uint64(16))
    x = (x >> np.uint64(32)) | (x << np.uint64(32))
    return _unit_float(x)


def hemisphere_table(n: int):
    """Hammersley set for cosine-weighted sampling.

    Returns ``(u, cos_phi, sin_phi)`` with ``u = (i + 0.5) / n`` (radial
    coordinate, r = sqrt(u)) and azimuth ``phi = 2 pi * radical_inverse(i)``.
    """
    if n < 1:
        raise ValueError("sample count must be >= 1")
    i = np.arange(n, dtype=np.uint64)
    u = (np.arange(n, dtype=np.float64) + 0.5) / n
    phi = 2.0 * np.pi * radical_inverse2(i)
    return u, np.cos(phi), np.sin(phi)


def pixel_streams(seed: int, pixel_ids):
    """Per-pixel Cranley-Patterson shift of ``u`` and azimuthal rotation.

    Returns ``(shift, cos_beta, sin_beta)`` for each pixel id.
    """
    ids = np.asarray(pixel_ids, dtype=np.uint64)
    base = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))[0]
    h1 = splitmix64(ids * np.uint64(2) ^ base)
    h2 = splitmix64(ids * np.uint64(2) + np.uint64(1) ^ base)
    shift = _unit_float(h1)
    beta = 2.0 * np.pi * _unit_float(h2)
    return shift, np.cos(beta), np.sin(beta)


def tangent_frames(normals):
    """Branchless orthonormal basis (Duff et al. 2017) for each unit normal."""
    n = np.asarray(normals, dtype=np.float64)
    sign = np.where(n[:, 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    bt = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return np.ascontiguousarray(t), np.ascontiguousarray(bt)


def disc_table(n: int):
    """Stratified points on the unit disc (concentric mapping of an n-point grid).

    ``n`` is rounded down to a square number.
    """
    k = max(1, int(np.floor(np.sqrt(n))))
    g = (np.arange(k) + 0.5) / k
    sx, sy = np.meshgrid(2 * g - 1, 2 * g - 1)
    sx, sy = sx.ravel(), sy.ravel()
    r = np.where(np.abs(sx) > np.abs(sy), sx, sy)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(np.abs(sx) > np.abs(sy), (np.pi / 4) * (sy / sx), (np.pi / 2) - (np.pi / 4) * (sx / sy))
    theta = np.nan_to_num(theta)
    return r * np.cos(theta), r * np.sin(theta)

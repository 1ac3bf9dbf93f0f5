"""Albedo scoring, multi-temporal consistency and change detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .scene_io import CameraView


class EvaluationError(ValueError):
    pass


def _pixels(x):
    return np.asarray(x.pixels if hasattr(x, "pixels") else x, dtype=np.float64)


def _as_hwc(x):
    x = _pixels(x)
    return x[..., None] if x.ndim == 2 else x


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape, bool)
    m = np.asarray(mask, bool)
    if m.shape != shape:
        raise EvaluationError(f"mask shape {m.shape} does not match image {shape}")
    return m


def smse(estimate, truth, mask=None) -> float:
    """Scale-invariant MSE: ``min_c mean((c*estimate - truth)^2)`` over valid pixels.

    One scale is shared by all channels; the mean runs over pixel-channel values.
    """
    e, t = _as_hwc(estimate), _as_hwc(truth)
    if e.shape != t.shape:
        raise EvaluationError(f"shape mismatch {e.shape} vs {t.shape}")
    m = _mask(mask, e.shape[:2])
    if not m.any():
        raise EvaluationError("empty mask")
    e, t = e[m].ravel(), t[m].ravel()
    ee = float(e @ e)
    c = float(e @ t) / ee if ee > 0 else 0.0
    return float(np.mean((c * e - t) ** 2))


def lmse(estimate, truth, mask=None, window: int = 20, stride: int = 10, min_valid: int = 10) -> float:
    """Mean of per-window SMSE on a sliding grid; each window gets its own scale."""
    e, t = _as_hwc(estimate), _as_hwc(truth)
    if e.shape != t.shape:
        raise EvaluationError(f"shape mismatch {e.shape} vs {t.shape}")
    h, w, _ = e.shape
    if h < window or w < window:
        raise EvaluationError("image smaller than the window")
    m = _mask(mask, (h, w)).astype(np.float64)
    em, tm = e * m[..., None], t * m[..., None]

    def wsum(x):
        s = sliding_window_view(x, (window, window), axis=(0, 1))[::stride, ::stride]
        return s.sum(axis=tuple(range(2, s.ndim)))

    n_px = wsum(m)
    ee, et, tt = wsum(em * e), wsum(em * t), wsum(tm * t)
    keep = n_px >= min_valid
    if not keep.any():
        raise EvaluationError("no usable windows")
    ee, et, tt, n = ee[keep], et[keep], tt[keep], n_px[keep] * e.shape[2]
    c = np.divide(et, ee, out=np.zeros_like(et), where=ee > 0)
    sse = np.maximum(c * c * ee - 2 * c * et + tt, 0.0)
    return float(np.mean(sse / n))


def lmse_reference(estimate, truth, mask=None, window: int = 20, stride: int = 10, min_valid: int = 10) -> float:
    """Window-by-window loop over ``smse``; slow, for checking ``lmse``."""
    e, t = _as_hwc(estimate), _as_hwc(truth)
    h, w, _ = e.shape
    m = _mask(mask, (h, w))
    vals = []
    for y in range(0, h - window + 1, stride):
        for x in range(0, w - window + 1, stride):
            mw = m[y:y + window, x:x + window]
            if mw.sum() < min_valid:
                continue
            vals.append(smse(e[y:y + window, x:x + window], t[y:y + window, x:x + window], mw))
    if not vals:
        raise EvaluationError("no usable windows")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# temporal consistency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyStats:
    p25: float
    median: float
    p75: float
    max: float
    std: float

    def as_row(self) -> dict:
        return {"p25": self.p25, "median": self.median, "p75": self.p75, "max": self.max, "std": self.std}


def temporal_consistency(stack, mask=None, normalize: bool = False, scale: float = 255.0) -> ConsistencyStats:
    """Deviation statistics of a co-registered stack from its temporal mean.

    Colour images are reduced to grey by the channel mean. ``normalize``
    rescales each image to a mean of 0.5 over the mask first, so raw images
    and scale-free albedo estimates can be compared. Values are reported
    on a 0-255 scale.
    """
    imgs = [_pixels(s) for s in stack]
    if len(imgs) < 2:
        raise EvaluationError("need at least two images")
    if any(i.shape != imgs[0].shape for i in imgs):
        raise EvaluationError("misaligned image dimensions")
    grey = np.stack([i.mean(axis=-1) if i.ndim == 3 else i for i in imgs])
    m = _mask(mask, grey.shape[1:])
    if not m.any():
        raise EvaluationError("empty mask")
    vals = grey[:, m]
    if normalize:
        means = vals.mean(axis=1, keepdims=True)
        vals = np.where(means > 0, 0.5 * vals / np.where(means > 0, means, 1.0), vals)
    dev = vals - vals.mean(axis=0, keepdims=True)
    absdev = np.abs(dev).ravel() * scale
    p25, med, p75 = np.percentile(absdev, [25, 50, 75])
    return ConsistencyStats(float(p25), float(med), float(p75), float(absdev.max()),
                            float(dev.std() * scale))


# ---------------------------------------------------------------------------
# warping and change detection
# ---------------------------------------------------------------------------


def warp_to_view(source, source_camera: CameraView, source_depth, target_camera: CameraView,
                 target_depth, depth_tolerance: float = 0.01):
    """Resample ``source`` into the target view through the target depth map.

    Returns ``(warped, valid)``; pixels without target depth, outside the
    source frame, or hidden in the source (depth test) are invalid and zero.
    """
    src = _pixels(source)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    tdepth = np.asarray(target_depth, dtype=np.float64)
    sdepth = np.asarray(source_depth, dtype=np.float64)
    has_depth = np.isfinite(tdepth) & (tdepth > 0)
    pts = target_camera.unproject(np.where(has_depth, tdepth, 1.0))
    u, v, z = source_camera.project(pts)
    h, w = src.shape[:2]
    inside = has_depth & (z > 0) & (u >= 0) & (u <= w) & (v >= 0) & (v <= h)
    # sample positions in array index space (pixel centers at integer + 0.5)
    coords = np.stack([v - 0.5, u - 0.5])
    coords = np.where(np.isfinite(coords), coords, -10.0)
    warped = np.stack([ndimage.map_coordinates(src[..., c], coords, order=1, mode="nearest")
                       for c in range(src.shape[2])], axis=-1)
    # inverse depth is affine across a planar facet, so bilinear sampling of
    # it is exact away from silhouettes; at silhouettes the blend fails the test
    s_ok = np.isfinite(sdepth) & (sdepth > 0)
    inv = np.where(s_ok, 1.0 / np.where(s_ok, sdepth, 1.0), 0.0)
    inv_s = ndimage.map_coordinates(inv, coords, order=1, mode="nearest")
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.where(inv_s > 0, 1.0 / inv_s, np.inf)
        visible = np.isfinite(sd) & (np.abs(sd - z) <= depth_tolerance * np.maximum(z, 1e-12))
    valid = inside & visible
    warped[~valid] = 0.0
    return (warped[..., 0] if squeeze else warped), valid


@dataclass(frozen=True, eq=False)
class ChangeMask:
    mask: np.ndarray
    tau: float
    radius: int

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def disc(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def change_detect(reference, source, tau: float = 0.1, radius: int = 2, valid=None,
                  order: str = "open-close") -> ChangeMask:
    """Threshold the max-channel absolute difference, then open and close with a disc."""
    a, b = _as_hwc(reference), _as_hwc(source)
    if a.shape != b.shape:
        raise EvaluationError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b).max(axis=-1)
    m = _mask(valid, diff.shape)
    raw = (diff > tau) & m
    se = disc(radius)
    if radius > 0:
        if order == "open-close":
            out = ndimage.binary_closing(ndimage.binary_opening(raw, se), se)
        elif order == "close-open":
            out = ndimage.binary_opening(ndimage.binary_closing(raw, se), se)
        else:
            raise ValueError("order must be 'open-close' or 'close-open'")
    else:
        out = raw
    return ChangeMask((out & m).astype(np.uint8), float(tau), int(radius))


def iou(a, b) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    union = (a | b).sum()
    return float((a & b).sum() / union) if union else 1.0

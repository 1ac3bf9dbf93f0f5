"""Lit-shadow pair sampling and sun-sky ratio estimation.

Pixels on either side of a cast-shadow edge are assumed to share albedo,
normal and sky visibility, so their radiance ratio isolates the sky-to-sun
intensity ratio.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np
from scipy import ndimage, stats

from .gbuffer import GBuffer

log = logging.getLogger(__name__)

LUMA = np.array([0.2126, 0.7152, 0.0722])


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class PairFilterCriteria:
    intensity_lo: float = 0.02        # fractions of the saturation level
    intensity_hi: float = 0.98
    saturation: float = 1.0
    max_depth_gap: float = 0.02       # relative
    max_normal_angle: float = 10.0    # degrees
    min_contrast: float = 0.02
    exclusion: int = 2                # penumbra half-width w, pixels
    offset_min: int = 3
    offset_max: int = 7
    min_pairs: int = 30

    def __post_init__(self):
        if not 0 < self.intensity_lo < self.intensity_hi:
            raise ValueError("need 0 < intensity_lo < intensity_hi")
        for f in ("saturation", "max_depth_gap", "max_normal_angle", "min_contrast", "exclusion"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be > 0")
        if not 0 < self.offset_min <= self.offset_max:
            raise ValueError("need 0 < offset_min <= offset_max")
        if self.min_pairs < 1:
            raise ValueError("min_pairs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "PairFilterCriteria":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pair filter keys: {sorted(unknown)}")
        return cls(**d)


class LitShadowPair(NamedTuple):
    lit: tuple
    shadow: tuple
    offset: float
    L_lit: np.ndarray
    L_shadow: np.ndarray
    phi: np.ndarray


@dataclass(eq=False)
class PairSet:
    """Structure-of-arrays pair list. Radiance fields are filled by ``filter_pairs``."""

    lit: np.ndarray                    # (n, 2) row, col
    shadow: np.ndarray                 # (n, 2)
    L_lit: np.ndarray | None = None    # (n, 3)
    L_shadow: np.ndarray | None = None
    s_sun_lit: np.ndarray | None = None
    s_sky_lit: np.ndarray | None = None
    s_sky_shadow: np.ndarray | None = None

    def __len__(self):
        return len(self.lit)

    @property
    def offset(self) -> np.ndarray:
        return np.linalg.norm((self.lit - self.shadow).astype(np.float64), axis=1)

    def subset(self, keep) -> "PairSet":
        return PairSet(**{f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[keep])
                          for f in fields(self)})

    def __getitem__(self, i) -> LitShadowPair:
        if self.L_lit is None:
            raise CalibrationError("pairs carry no radiance yet; run filter_pairs first")
        return LitShadowPair(tuple(self.lit[i]), tuple(self.shadow[i]), float(self.offset[i]),
                             self.L_lit[i], self.L_shadow[i], pair_phi(self.L_lit[i], self.L_shadow[i]))

    @classmethod
    def concat(cls, sets) -> "PairSet":
        sets = list(sets)
        out = {}
        for f in fields(cls):
            vals = [getattr(s, f.name) for s in sets]
            out[f.name] = None if any(v is None for v in vals) else np.concatenate(vals)
        return cls(**out)


@dataclass(frozen=True)
class PhiEstimate:
    phi: np.ndarray
    std: np.ndarray
    count: int
    trimmed_fraction: np.ndarray
    p_value: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))

    def as_row(self) -> dict:
        row = {}
        for c, name in enumerate("rgb"):
            row[f"phi_{name}"] = float(self.phi[c])
            row[f"std_{name}"] = float(self.std[c])
            row[f"trimmed_{name}"] = float(self.trimmed_fraction[c])
            row[f"p_{name}"] = float(self.p_value[c])
        row["count"] = self.count
        return row


# ---------------------------------------------------------------------------
# boundaries
# ---------------------------------------------------------------------------


def extract_shadow_boundary(alpha0, valid=None) -> np.ndarray:
    """Pixels whose 4-neighbourhood contains both visibility values.

    With ``valid`` given, only neighbours that are both valid count.
    """
    a = np.asarray(alpha0) > 0.5
    v = np.ones(a.shape, bool) if valid is None else np.asarray(valid, bool)
    out = np.zeros(a.shape, bool)
    diff_r = (a[1:, :] != a[:-1, :]) & v[1:, :] & v[:-1, :]
    diff_c = (a[:, 1:] != a[:, :-1]) & v[:, 1:] & v[:, :-1]
    out[1:, :] |= diff_r
    out[:-1, :] |= diff_r
    out[:, 1:] |= diff_c
    out[:, :-1] |= diff_c
    return out


def signed_distance(alpha0) -> np.ndarray:
    """Euclidean distance to the other class; positive on lit pixels."""
    a = np.asarray(alpha0) > 0.5
    if a.all() or not a.any():
        return np.zeros(a.shape)
    return ndimage.distance_transform_edt(a) - ndimage.distance_transform_edt(~a)


def boundary_normals(alpha0, smoothing: float = 1.0) -> np.ndarray:
    """Unit (row, col) direction from shadow toward lit at every pixel.

    Gradient of the Gaussian-smoothed signed distance transform.
    """
    sdf = signed_distance(alpha0)
    if smoothing > 0:
        sdf = ndimage.gaussian_filter(sdf, smoothing, mode="nearest")
    gr, gc = np.gradient(sdf)
    g = np.stack([gr, gc], axis=-1)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(norm > 1e-12, g / np.maximum(norm, 1e-12), 0.0)


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------


def _walk(start, direction, steps, accept):
    """First accepted pixel along ``start + s * direction`` for each row; -1 if none."""
    n = len(start)
    found = np.full((n, 2), -1, dtype=np.int64)
    todo = np.ones(n, bool)
    for s in steps:
        if not todo.any():
            break
        idx = np.flatnonzero(todo)
        pix = np.rint(start[idx] + s * direction[idx]).astype(np.int64)
        ok = accept(pix)
        found[idx[ok]] = pix[ok]
        todo[idx[ok]] = False
    return found


def sample_pairs(boundary, alpha0, criteria: PairFilterCriteria | None = None, valid=None,
                 normals=None) -> PairSet:
    """One lit and one shadow pixel per boundary pixel, stepping along the boundary normal.

    Candidates lie ``offset_min..offset_max`` pixels from the boundary pixel and
    at least ``max(offset_min, exclusion + 1)`` pixels (Euclidean distance
    transform) from the other class. Boundary pixels without a candidate on
    both sides are dropped.
    """
    crit = criteria or PairFilterCriteria()
    a = np.asarray(alpha0) > 0.5
    h, w = a.shape
    v = np.ones(a.shape, bool) if valid is None else np.asarray(valid, bool)
    bpix = np.argwhere(boundary)
    if len(bpix) == 0:
        return PairSet(np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64))
    g = (boundary_normals(a) if normals is None else normals)[bpix[:, 0], bpix[:, 1]]
    has_dir = np.linalg.norm(g, axis=1) > 0.5
    bpix, g = bpix[has_dir], g[has_dir]

    d_lit = ndimage.distance_transform_edt(a) if not a.all() else np.full(a.shape, np.inf)
    d_sh = ndimage.distance_transform_edt(~a) if a.any() else np.full(a.shape, np.inf)
    min_dist = max(crit.offset_min, crit.exclusion + 1)
    steps = range(crit.offset_min, crit.offset_max + 1)

    def accept(side_lit):
        dist = d_lit if side_lit else d_sh

        def f(pix):
            inside = (pix[:, 0] >= 0) & (pix[:, 0] < h) & (pix[:, 1] >= 0) & (pix[:, 1] < w)
            ok = np.zeros(len(pix), bool)
            r, c = pix[inside, 0], pix[inside, 1]
            ok[inside] = (a[r, c] == side_lit) & v[r, c] & (dist[r, c] >= min_dist)
            return ok
        return f

    lit = _walk(bpix.astype(np.float64), g, steps, accept(True))
    sh = _walk(bpix.astype(np.float64), -g, steps, accept(False))
    keep = (lit[:, 0] >= 0) & (sh[:, 0] >= 0)
    return PairSet(lit[keep], sh[keep])


def _angle_deg(n1, n2):
    return np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", n1, n2), -1.0, 1.0)))


def filter_pairs(pairs: PairSet, image, gbuffer: GBuffer, criteria: PairFilterCriteria | None = None) -> PairSet:
    """Keep pairs that are well exposed, depth-continuous, coplanar and contrasted."""
    crit = criteria or PairFilterCriteria()
    px = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    if len(pairs) == 0:
        return pairs.subset(slice(0, 0)) if pairs.L_lit is not None else PairSet(
            pairs.lit, pairs.shadow, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0))
    lr, lc = pairs.lit[:, 0], pairs.lit[:, 1]
    sr, sc = pairs.shadow[:, 0], pairs.shadow[:, 1]
    L_lit = px[lr, lc].astype(np.float64)
    L_sh = px[sr, sc].astype(np.float64)

    lo, hi = crit.intensity_lo * crit.saturation, crit.intensity_hi * crit.saturation
    ok = gbuffer.hit[lr, lc] & gbuffer.hit[sr, sc]
    ok &= np.all((L_lit >= lo) & (L_lit <= hi), axis=1)
    ok &= np.all((L_sh >= lo) & (L_sh <= hi), axis=1)
    d1, d2 = gbuffer.depth[lr, lc], gbuffer.depth[sr, sc]
    with np.errstate(invalid="ignore"):
        gap = np.abs(d1 - d2) / np.maximum(np.minimum(d1, d2), 1e-12)
        ok &= gap <= crit.max_depth_gap
        ok &= _angle_deg(gbuffer.normal[lr, lc], gbuffer.normal[sr, sc]) <= crit.max_normal_angle
    ok &= np.all(L_lit - L_sh >= crit.min_contrast, axis=1)

    out = PairSet(pairs.lit, pairs.shadow, L_lit, L_sh,
                  _opt(gbuffer.s_sun, lr, lc), _opt(gbuffer.s_sky, lr, lc), _opt(gbuffer.s_sky, sr, sc))
    return out.subset(ok)


def _opt(arr, r, c):
    return None if arr is None else np.asarray(arr)[r, c].astype(np.float64)


# ---------------------------------------------------------------------------
# ratio samples
# ---------------------------------------------------------------------------


def pair_phi(L_lit, L_shadow, min_contrast: float = 0.0) -> np.ndarray:
    """Per-channel ``L_shadow / (L_lit - L_shadow)``.

    Raises if any contrast is not above ``min_contrast``: such pairs should
    have been removed by ``filter_pairs``.
    """
    L_lit = np.asarray(L_lit, dtype=np.float64)
    L_shadow = np.asarray(L_shadow, dtype=np.float64)
    contrast = L_lit - L_shadow
    if np.any(~(contrast > min_contrast)):
        raise CalibrationError("lit-shadow contrast too small; pair was not filtered")
    return L_shadow / contrast


def corrected_samples(pairs: PairSet, luminance: bool = False) -> np.ndarray:
    """Per-pair ratio samples with the geometric shading terms divided out.

    From ``r = L_sh / L_lit = phi*S_sky_sh / (S_sun_lit + phi*S_sky_lit)`` it
    follows ``phi = r*S_sun_lit / (S_sky_sh - r*S_sky_lit)``. Samples with a
    non-positive denominator are NaN.
    """
    if pairs.s_sun_lit is None or pairs.s_sky_lit is None or pairs.s_sky_shadow is None:
        raise CalibrationError("corrected samples need shading terms; use filter_pairs with a full G-buffer")
    L_lit, L_sh = pairs.L_lit, pairs.L_shadow
    if luminance:
        L_lit, L_sh = (L_lit @ LUMA)[:, None], (L_sh @ LUMA)[:, None]
    r = L_sh / L_lit
    den = pairs.s_sky_shadow[:, None] - r * pairs.s_sky_lit[:, None]
    num = r * pairs.s_sun_lit[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 1e-9, num / den, np.nan)
    return out


def raw_samples(pairs: PairSet, luminance: bool = False) -> np.ndarray:
    L_lit, L_sh = pairs.L_lit, pairs.L_shadow
    if luminance:
        L_lit, L_sh = (L_lit @ LUMA)[:, None], (L_sh @ LUMA)[:, None]
    return pair_phi(L_lit, L_sh)


def _normality_p(x, mu, sd, bins=10):
    if len(x) < bins or not sd > 0:
        return np.nan
    edges = stats.norm.ppf(np.linspace(0, 1, bins + 1), mu, sd)
    observed = np.bincount(np.digitize(x, edges[1:-1]), minlength=bins)
    expected = np.full(bins, len(x) / bins)
    return float(stats.chisquare(observed, expected, ddof=2).pvalue)


def trimmed_gaussian_mean(x, z: float = 1.96):
    """Mean of samples within ``z`` standard deviations of the fitted Gaussian.

    Returns ``(mean, std, trimmed_fraction, p_value)``; std is of the full sample.
    """
    x = np.asarray(x, dtype=np.float64)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        raise CalibrationError("no finite samples")
    mu, sd = float(x.mean()), float(x.std(ddof=1)) if len(x) > 1 else 0.0
    keep = np.abs(x - mu) <= z * sd
    if not keep.any():
        raise CalibrationError("all samples trimmed")
    return float(x[keep].mean()), sd, 1.0 - keep.mean(), _normality_p(x, mu, sd)


def estimate_phi(samples, min_pairs: int = 30, mode: str = "corrected", luminance: bool = False) -> PhiEstimate:
    """Robust per-channel sun-sky ratio.

    ``samples`` is either a filtered ``PairSet`` or an (n,) / (n, 3) array of
    per-pair ratios. For a PairSet, ``mode`` picks the per-pair ratio:
    ``"corrected"`` (shading-corrected) or ``"raw"`` (plain radiance ratio).
    """
    if isinstance(samples, PairSet):
        if len(samples) < min_pairs:
            raise CalibrationError(f"insufficient pairs ({len(samples)} < {min_pairs})")
        if mode == "corrected":
            x = corrected_samples(samples, luminance)
        elif mode == "raw":
            x = raw_samples(samples, luminance)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    else:
        x = np.asarray(samples, dtype=np.float64)
        if luminance and x.ndim == 2:
            x = x @ LUMA
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < min_pairs:
        raise CalibrationError(f"insufficient pairs ({len(x)} < {min_pairs})")
    usable = np.isfinite(x).all(axis=1)
    if usable.sum() < min_pairs:
        raise CalibrationError(f"insufficient pairs ({int(usable.sum())} usable < {min_pairs})")
    x = x[usable]
    res = [trimmed_gaussian_mean(x[:, c]) for c in range(x.shape[1])]
    phi, sd, frac, p = (np.array([r[i] for r in res]) for i in range(4))
    if x.shape[1] == 1:
        phi, sd, frac, p = (np.repeat(v, 3) for v in (phi, sd, frac, p))
    return PhiEstimate(np.maximum(phi, 0.0), sd, int(len(x)), frac, p)


# ---------------------------------------------------------------------------
# convenience
# ---------------------------------------------------------------------------


def collect_pairs(image, gbuffer: GBuffer, criteria: PairFilterCriteria | None = None) -> PairSet:
    """Boundary extraction, sampling and filtering for one view."""
    crit = criteria or PairFilterCriteria()
    alpha0 = np.where(gbuffer.hit, gbuffer.v_sun, 0.0)
    boundary = extract_shadow_boundary(alpha0, gbuffer.hit)
    candidates = sample_pairs(boundary, alpha0, crit, valid=gbuffer.hit)
    accepted = filter_pairs(candidates, image, gbuffer, crit)
    log.debug("pairs: %d boundary px, %d candidates, %d accepted",
              int(boundary.sum()), len(candidates), len(accepted))
    return accepted


def calibrate(image, gbuffer: GBuffer, criteria: PairFilterCriteria | None = None,
              mode: str = "corrected", luminance: bool = False):
    crit = criteria or PairFilterCriteria()
    pairs = collect_pairs(image, gbuffer, crit)
    return estimate_phi(pairs, crit.min_pairs, mode, luminance), pairs


def write_pairs_csv(pairs: PairSet, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["lit_row", "lit_col", "shadow_row", "shadow_col", "offset",
                     "lit_r", "lit_g", "lit_b", "shadow_r", "shadow_g", "shadow_b",
                     "phi_r", "phi_g", "phi_b"])
        with np.errstate(divide="ignore", invalid="ignore"):
            phis = pairs.L_shadow / (pairs.L_lit - pairs.L_shadow)
        for i in range(len(pairs)):
            wr.writerow([*pairs.lit[i], *pairs.shadow[i], f"{pairs.offset[i]:.4f}",
                         *(f"{v:.6g}" for v in pairs.L_lit[i]), *(f"{v:.6g}" for v in pairs.L_shadow[i]),
                         *(f"{v:.6g}" for v in phis[i])])

"""Continuous sun visibility near shadow edges.

Binary visibility from ray casting leaves bright/dark rings in the recovered
albedo wherever the real shadow edge is soft. Along short transects across
each edge we solve for alpha in [0, 1] that keeps the implied inverse albedo
``1/rho = psi * (S_sun*alpha + phi*S_sky) / L`` piecewise flat (total
variation), while staying close to the binary map away from the edge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np
from scipy import linalg
from scipy.optimize import lsq_linear

from .calibration import boundary_normals, extract_shadow_boundary
from .gbuffer import GBuffer

log = logging.getLogger(__name__)


class RefineError(ValueError):
    pass


@dataclass(frozen=True)
class RefineParams:
    k: int = 8                       # transect half-length
    lam: float = 1e-3                # TV weight on median-normalized 1/rho
    exclusion: int = 2               # free band half-width w
    anchor: float = 1.0              # weight of alpha0 outside the free band
    max_iter: int = 10
    floor: float = 1e-6              # IRLS reweighting floor
    max_depth_gap: float = 0.02      # relative
    max_normal_angle: float = 10.0   # degrees
    mode: str = "tv"                 # "tv" or "l2"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.lam <= 0 or self.floor <= 0:
            raise ValueError("lam and floor must be > 0")
        if self.mode not in ("tv", "l2"):
            raise ValueError("mode must be 'tv' or 'l2'")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RefineParams":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown refine keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class ShadowProfile:
    """One transect, ordered from the shadow side to the lit side."""

    pixels: np.ndarray       # (n, 2) row, col
    radiance: np.ndarray     # (n, 3)
    s_sun: np.ndarray
    s_sky: np.ndarray
    alpha0: np.ndarray
    weights: np.ndarray      # diagonal of P
    confidence: np.ndarray   # compositing weights
    transition: int          # index of the first lit sample
    prior: np.ndarray | None = None   # continuous data-term target; alpha0 when None

    @property
    def target(self) -> np.ndarray:
        return self.alpha0 if self.prior is None else self.prior

    def __len__(self):
        return len(self.pixels)


@dataclass(frozen=True)
class ProfileResult:
    alpha: np.ndarray
    objective: np.ndarray    # objective after each accepted pass (entry 0 is the start)
    converged: bool
    n_iter: int


# ---------------------------------------------------------------------------
# transects
# ---------------------------------------------------------------------------


def _angle_deg(n1, n2):
    return np.degrees(np.arccos(np.clip(float(np.dot(n1, n2)), -1.0, 1.0)))


def _half(start, g, sign, k, alpha0, gb: GBuffer, params: RefineParams, lit_side: bool):
    """Samples on one side of the center, stopping at the first break."""
    h, w = alpha0.shape
    out = []
    prev = tuple(start)
    seen_side = alpha0[prev] == lit_side
    for s in range(1, k + 1):
        p = tuple(np.rint(np.asarray(start) + sign * s * g).astype(int))
        if p == prev:
            continue
        if np.hypot(p[0] - start[0], p[1] - start[1]) > k:
            break            # rounding must not carry the transect past radius k
        if not (0 <= p[0] < h and 0 <= p[1] < w) or not gb.hit[p]:
            break
        d0, d1 = gb.depth[prev], gb.depth[p]
        if abs(d1 - d0) / min(d0, d1) > params.max_depth_gap:
            break
        if _angle_deg(gb.normal[prev], gb.normal[p]) > params.max_normal_angle:
            break
        is_side = alpha0[p] == lit_side
        if seen_side and not is_side:
            break            # a second transition
        seen_side |= is_side
        out.append(p)
        prev = p
    return out


def _tent(n, t, k):
    i = np.arange(n)
    return np.clip(1.0 - np.abs(i - (t - 0.5)) / (k + 1.0), 0.05, 1.0)


def extract_profiles(alpha0, image, gb: GBuffer, params: RefineParams | None = None,
                     boundary=None, normals=None, prior=None) -> list:
    """One transect per boundary pixel along the local boundary normal.

    Transects stop before a depth jump, a normal jump, a second visibility
    transition or a non-hit pixel; those left without an edge are dropped.
    ``prior`` (a continuous visibility map) replaces alpha0 as the data-term
    target while the transect layout still follows the binary map.
    """
    p = params or RefineParams()
    a = np.asarray(alpha0) > 0.5
    px = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    if boundary is None:
        boundary = extract_shadow_boundary(a, gb.hit)
    if normals is None:
        normals = boundary_normals(a)
    profiles = []
    for b in np.argwhere(boundary & gb.hit):
        g = normals[b[0], b[1]]
        if not np.linalg.norm(g) > 0.5:
            continue
        b = tuple(b)
        back = _half(b, g, -1, p.k, a, gb, p, lit_side=False)   # toward shadow
        fwd = _half(b, g, +1, p.k, a, gb, p, lit_side=True)     # toward light
        pix = np.array(back[::-1] + [b] + fwd)
        al = a[pix[:, 0], pix[:, 1]]
        if np.count_nonzero(np.diff(al.astype(int))) != 1 or al[0] or not al[-1]:
            continue
        t = int(np.argmax(al))
        if t < 1 or len(pix) - t < 1:
            continue
        i = np.arange(len(pix))
        weights = np.where(np.abs(i - (t - 0.5)) < p.exclusion + 0.5, 0.0, p.anchor)
        r, c = pix[:, 0], pix[:, 1]
        profiles.append(ShadowProfile(
            pixels=pix, radiance=px[r, c].astype(np.float64),
            s_sun=gb.s_sun[r, c].astype(np.float64), s_sky=gb.s_sky[r, c].astype(np.float64),
            alpha0=al.astype(np.float64), weights=weights,
            confidence=_tent(len(pix), t, p.k), transition=t,
            prior=None if prior is None else np.asarray(prior, dtype=np.float64)[r, c],
        ))
    return profiles


# ---------------------------------------------------------------------------
# per-profile solve
# ---------------------------------------------------------------------------


def inverse_albedo_terms(profile: ShadowProfile, phi, psi, normalize: bool = False):
    """``1/rho = a*alpha + b`` with channel-averaged coefficients.

    With ``normalize`` both are divided by the median of ``1/rho`` at alpha0,
    which makes the TV term independent of exposure and albedo level.
    """
    L = profile.radiance
    if np.any(~(L > 0)):
        raise RefineError("zero radiance on profile")
    psi = np.asarray(psi, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    a = np.mean(psi * profile.s_sun[:, None] / L, axis=1)
    b = np.mean(psi * phi * profile.s_sky[:, None] / L, axis=1)
    if normalize:
        level = float(np.median(a * profile.target + b))
        if level > 0:
            a, b = a / level, b / level
    return a, b


def total_variation(x) -> float:
    return float(np.abs(np.diff(x)).sum())


def _objective(alpha, alpha0, P, a, b, lam):
    return float(np.sum(P * (alpha - alpha0) ** 2) + lam * total_variation(a * alpha + b))


def _solve_weighted(alpha0, P, a, b, lam, wts):
    """Minimize sum P(alpha - alpha0)^2 + lam/2 sum wts * (D(a alpha + b))^2 over [0, 1]."""
    n = len(alpha0)
    wl = np.r_[0.0, wts]      # weight of the difference ending at i
    wr = np.r_[wts, 0.0]      # weight of the difference starting at i
    diag = 2.0 * P + lam * a * a * (wl + wr)
    off = -lam * wts * a[:-1] * a[1:]
    # right-hand side: 2 P alpha0 - lam * A D^T W D b
    Db = np.diff(b) * wts
    DtWDb = np.r_[0.0, Db] - np.r_[Db, 0.0]
    rhs = 2.0 * P * alpha0 - lam * a * DtWDb
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    try:
        x = linalg.solve_banded((1, 1), ab, rhs)
    except (linalg.LinAlgError, ValueError):
        x = np.full(n, np.nan)
    if np.all(np.isfinite(x)) and x.min() >= 0.0 and x.max() <= 1.0:
        return x
    # box-constrained fallback: the same quadratic as a bounded least-squares problem
    rows = [np.diag(np.sqrt(P))]
    rhs_ls = [np.sqrt(P) * alpha0]
    sw = np.sqrt(lam * wts / 2.0)
    D = np.diff(np.eye(n), axis=0)
    rows.append(sw[:, None] * D * a[None, :])
    rhs_ls.append(-sw * np.diff(b))
    res = lsq_linear(np.vstack(rows), np.concatenate(rhs_ls), bounds=(0.0, 1.0), method="bvls")
    return np.clip(res.x, 0.0, 1.0)


def refine_profile(profile: ShadowProfile, phi, psi, params: RefineParams | None = None) -> ProfileResult:
    """TV-regularized visibility along one transect by iteratively reweighted least squares.

    Every pass solves a tridiagonal system exactly; a pass is kept only if
    it does not increase the objective.
    """
    p = params or RefineParams()
    a, b = inverse_albedo_terms(profile, phi, psi, normalize=True)
    alpha0, P = profile.target, profile.weights
    n = len(alpha0)
    if n < 2:
        return ProfileResult(alpha0.copy(), np.array([0.0]), True, 0)
    if p.mode == "l2":
        alpha = _solve_weighted(alpha0, P, a, b, p.lam, np.ones(n - 1))
        return ProfileResult(alpha, np.array([_objective(alpha, alpha0, P, a, b, p.lam)]), True, 1)

    alpha = alpha0.copy()
    best = _objective(alpha, alpha0, P, a, b, p.lam)
    history = [best]
    converged = False
    it = 0
    for it in range(1, p.max_iter + 1):
        r = np.diff(a * alpha + b)
        wts = 1.0 / np.maximum(np.abs(r), p.floor)
        cand = _solve_weighted(alpha0, P, a, b, p.lam, wts)
        obj = _objective(cand, alpha0, P, a, b, p.lam)
        if not obj <= best:
            converged = True     # no further descent available from this surrogate
            it -= 1
            break
        step = float(np.max(np.abs(cand - alpha)))
        rel = (best - obj) / max(best, 1e-300)
        alpha, best = cand, obj
        history.append(obj)
        if step < 1e-4 or rel < 1e-6:
            converged = True
            break
    return ProfileResult(alpha, np.array(history), converged, it)


# ---------------------------------------------------------------------------
# compositing
# ---------------------------------------------------------------------------


def composite_alpha(alpha0, profiles, results) -> np.ndarray:
    """Confidence-weighted mean of all transects covering each pixel.

    Uncovered pixels keep ``alpha0``. Accumulation follows profile order.
    """
    alpha0 = np.asarray(alpha0, dtype=np.float64)
    num = np.zeros(alpha0.shape)
    den = np.zeros(alpha0.shape)
    for prof, res in zip(profiles, results):
        r, c = prof.pixels[:, 0], prof.pixels[:, 1]
        alpha = res.alpha if isinstance(res, ProfileResult) else np.asarray(res)
        np.add.at(num, (r, c), prof.confidence * alpha)
        np.add.at(den, (r, c), prof.confidence)
    out = alpha0.copy()
    covered = den > 0
    out[covered] = num[covered] / den[covered]
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class RefineOutcome:
    alpha: np.ndarray
    profiles: list
    results: list

    @property
    def n_unconverged(self) -> int:
        return sum(not r.converged for r in self.results)


def refine_visibility(image, gb: GBuffer, phi, psi, params: RefineParams | None = None,
                      prior=None) -> RefineOutcome:
    """Full refinement for one view: transects, per-transect solves, compositing.

    Transects follow the binary visibility in ``gb``. Passing a previous
    result as ``prior`` re-refines it starting from that map.
    """
    p = params or RefineParams()
    binary = gb.hit & (np.nan_to_num(gb.v_sun) > 0.5)
    a0 = np.where(gb.hit, binary if prior is None else prior, 0.0).astype(np.float64)
    profiles = extract_profiles(binary, image, gb, p, prior=None if prior is None else a0)
    profiles = [pr for pr in profiles if np.all(pr.radiance > 0)]
    results = [refine_profile(pr, phi, psi, p) for pr in profiles]
    alpha = composite_alpha(a0, profiles, results)
    alpha = np.where(gb.hit, alpha, 0.0)
    out = RefineOutcome(alpha, profiles, results)
    if out.n_unconverged:
        log.info("%d of %d transects hit the pass limit", out.n_unconverged, len(results))
    return out

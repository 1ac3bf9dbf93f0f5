"""Adapters for external photogrammetry outputs: camera poses and depth maps."""

from __future__ import annotations

import csv
import logging
import warnings
from pathlib import Path

import numpy as np

from .scene_io import CameraView, SceneError, format_timestamp, parse_timestamp, rotation_defect

log = logging.getLogger(__name__)

CSV_COLUMNS = (["image", "fx", "fy", "cx", "cy"]
               + [f"r{i}{j}" for i in range(3) for j in range(3)]
               + ["cx_world", "cy_world", "cz_world", "timestamp"])
OPTIONAL_CSV_COLUMNS = ("width", "height", "name")

SILENT_DEFECT = 1e-6
MAX_DEFECT = 1e-3

# Bundler cameras look down -z with y up; ours look down +z with y down.
_BUNDLER_FLIP = np.diag([1.0, -1.0, -1.0])


def nearest_rotation(R) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    Q = u @ vt
    if np.linalg.det(Q) < 0:
        u[:, -1] *= -1
        Q = u @ vt
    return Q


def orthonormalize(R, label: str = "rotation") -> np.ndarray:
    """Project onto SO(3); warn above 1e-6 defect, fail above 1e-3."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(R)):
        raise SceneError(f"{label}: non-finite entries")
    if np.linalg.det(R) < 0:
        raise SceneError(f"{label}: improper rotation (det = -1)")
    d = rotation_defect(R)
    if d > MAX_DEFECT:
        raise SceneError(f"{label}: not orthonormal (defect {d:.3g})")
    if d > SILENT_DEFECT:
        warnings.warn(f"{label}: re-orthonormalized (defect {d:.3g})", stacklevel=3)
    return nearest_rotation(R)


def _read_generic_csv(path, width=None, height=None) -> list:
    views = []
    with open(path, newline="") as fh:
        rows = [r for r in fh if r.strip() and not r.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise SceneError(f"pose CSV missing columns {sorted(missing)}")
    for i, row in enumerate(reader):
        R = orthonormalize([float(row[f"r{a}{b}"]) for a in range(3) for b in range(3)], f"row {i + 1}")
        w = int(row.get("width") or width or round(2 * float(row["cx"])))
        h = int(row.get("height") or height or round(2 * float(row["cy"])))
        views.append(CameraView(
            width=w, height=h, fx=float(row["fx"]), fy=float(row["fy"]),
            cx=float(row["cx"]), cy=float(row["cy"]), rotation=R,
            center=[float(row["cx_world"]), float(row["cy_world"]), float(row["cz_world"])],
            timestamp=parse_timestamp(row["timestamp"]), image=row["image"],
            name=row.get("name") or Path(row["image"]).stem,
        ))
    return views


def _read_bundler(path, image_list=None, width=None, height=None, timestamps=None) -> list:
    """Bundler v0.3 ``bundle.out``: per camera ``f k1 k2``, 3x3 R, t.

    Image names come from ``image_list`` (one per line, optionally followed by
    ``width height timestamp``). Lens distortion is assumed already removed.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines and lines[0].startswith("#"):
        lines = lines[1:]
    try:
        n_cams = int(lines[0].split()[0])
    except (IndexError, ValueError) as exc:
        raise SceneError("malformed Bundler header") from exc
    meta = []
    if image_list is not None:
        with open(image_list) as fh:
            meta = [ln.split() for ln in fh if ln.strip()]
        if len(meta) != n_cams:
            raise SceneError(f"image list has {len(meta)} entries for {n_cams} cameras")
    views = []
    body = lines[1:]
    for i in range(n_cams):
        block = body[5 * i: 5 * i + 5]
        if len(block) < 5:
            raise SceneError(f"Bundler file truncated at camera {i}")
        f, k1, k2 = (float(x) for x in block[0].split()[:3])
        if f <= 0:
            continue  # unregistered camera
        if k1 or k2:
            log.warning("camera %d: ignoring radial distortion (k1=%g, k2=%g)", i, k1, k2)
        Rb = np.array([[float(x) for x in block[j].split()] for j in (1, 2, 3)])
        t = np.array([float(x) for x in block[4].split()])
        R = orthonormalize(_BUNDLER_FLIP @ Rb, f"camera {i}")
        center = -Rb.T @ t
        m = meta[i] if meta else []
        name = m[0] if m else f"cam{i:04d}"
        w = int(m[1]) if len(m) > 2 else width
        h = int(m[2]) if len(m) > 2 else height
        ts = m[3] if len(m) > 3 else (timestamps[i] if timestamps is not None else None)
        if w is None or h is None or ts is None:
            raise SceneError(f"camera {i}: image size and timestamp required (image list or arguments)")
        views.append(CameraView(width=w, height=h, fx=f, fy=f, cx=w / 2.0, cy=h / 2.0,
                                rotation=R, center=center, timestamp=parse_timestamp(ts),
                                image=name, name=Path(name).stem))
    return views


def import_poses(path, fmt: str | None = None, **kw) -> list:
    """Read camera poses; ``fmt`` is ``"csv"`` or ``"bundler"`` (guessed from the suffix)."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "bundler" if path.suffix.lower() == ".out" else None
    if fmt == "csv":
        return _read_generic_csv(path, **kw)
    if fmt == "bundler":
        return _read_bundler(path, **kw)
    raise SceneError(f"unknown pose format {fmt!r}")


def export_poses_csv(views, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS + list(OPTIONAL_CSV_COLUMNS))
        for v in views:
            wr.writerow([v.image or v.name, repr(v.fx), repr(v.fy), repr(v.cx), repr(v.cy),
                         *(repr(float(x)) for x in v.rotation.ravel()),
                         *(repr(float(x)) for x in v.center),
                         format_timestamp(v.timestamp), v.width, v.height, v.name])


# ---------------------------------------------------------------------------
# depth maps
# ---------------------------------------------------------------------------


def depth_to_normals(depth, camera: CameraView, max_gap: float = 0.02, frame: str = "world"):
    """Normals from central differences of the unprojected depth map.

    Returns ``(normals, valid)``. Normals face the camera; pixels on the
    border, with missing neighbours, or with a relative depth gap above
    ``max_gap`` to a neighbour are invalid (NaN). ``frame`` is ``"world"``
    or ``"camera"``.
    """
    d = np.asarray(depth, dtype=np.float64)
    good = np.isfinite(d) & (d > 0)
    pc = camera.pixel_directions() * np.where(good, d, 0.0)[..., None]
    h, w = d.shape
    valid = np.zeros((h, w), bool)
    valid[1:-1, 1:-1] = True
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb = np.roll(d, (-dy, -dx), axis=(0, 1))
        nb_good = np.roll(good, (-dy, -dx), axis=(0, 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            gap = np.abs(nb - d) / np.minimum(nb, d)
        valid &= nb_good & (gap <= max_gap)
    valid &= good
    du = np.zeros_like(pc)
    dv = np.zeros_like(pc)
    du[:, 1:-1] = pc[:, 2:] - pc[:, :-2]
    dv[1:-1, :] = pc[2:, :] - pc[:-2, :]
    n = np.cross(dv, du)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    valid &= norm[..., 0] > 0
    n = n / np.where(norm > 0, norm, 1.0)
    toward = np.einsum("hwc,hwc->hw", n, pc) > 0   # camera at the origin of pc
    n[toward] *= -1
    if frame == "world":
        n = n @ camera.rotation
    elif frame != "camera":
        raise ValueError("frame must be 'world' or 'camera'")
    n[~valid] = np.nan
    return n, valid

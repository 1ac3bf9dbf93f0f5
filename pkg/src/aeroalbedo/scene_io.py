"""Scene ingest and raster persistence.

Everything lives in a local ENU frame (+x east, +y north, +z up, meters)
anchored at the project's geodetic origin. Meshes, camera centers and the
sun direction must all share that frame.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger(__name__)

ROTATION_TOL = 1e-9


class SceneError(ValueError):
    """Raised for malformed scene inputs (meshes, projects, images)."""


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    n_dropped: int = 0
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise SceneError("vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise SceneError("triangles must be an (m, 3) array")
        if len(t) == 0:
            raise SceneError("empty mesh")
        if t.min() < 0 or t.max() >= len(v):
            raise SceneError("triangle index out of range")
        cross = _face_cross(v, t)
        area2 = np.linalg.norm(cross, axis=1)
        if np.any(area2 <= 0.0):
            raise SceneError("degenerate triangle (zero area)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "normals", cross / area2[:, None])

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "TriangleMesh":
        """Build a mesh, dropping zero-area triangles instead of failing."""
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) == 0:
            raise SceneError("empty mesh")
        if t.min() < 0 or t.max() >= len(v):
            raise SceneError("triangle index out of range")
        keep = np.linalg.norm(_face_cross(v, t), axis=1) > 0.0
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            log.warning("dropped %d degenerate triangle(s)", dropped)
        if not keep.any():
            raise SceneError("empty mesh")
        return cls(v, t[keep], n_dropped=dropped)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self):
        """Return the three (m, 3) corner arrays."""
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()


def _face_cross(v, t):
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return np.cross(b - a, c - a)


def load_mesh(path) -> TriangleMesh:
    """Load a triangle mesh from ASCII OBJ or ASCII/binary PLY."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        v, t = _read_obj(path)
    elif suffix == ".ply":
        v, t = _read_ply(path)
    else:
        raise SceneError(f"unsupported mesh format: {suffix}")
    if len(t) == 0:
        raise SceneError("empty mesh")
    return TriangleMesh.from_arrays(v, t)


def _read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise SceneError(f"{path}:{lineno}: non-triangular face ({len(idx)} vertices)")
                face = []
                for tok in idx:
                    i = int(tok.split("/")[0])
                    face.append(i - 1 if i > 0 else len(verts) + i)
                faces.append(face)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise SceneError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop, dtype) | (prop, ('list', count_t, item_t))])
        while True:
            line = fh.readline()
            if not line:
                raise SceneError(f"{path}: truncated PLY header")
            parts = line.decode("ascii").split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            elif parts[0] == "end_header":
                break
        data = fh.read()

    verts = faces = None
    if fmt == "ascii":
        tokens = data.split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, ptype in props:
                    if isinstance(ptype, tuple):
                        n = int(tokens[pos])
                        row[pname] = [int(x) for x in tokens[pos + 1:pos + 1 + n]]
                        pos += 1 + n
                    else:
                        row[pname] = float(tokens[pos])
                        pos += 1
                rows.append(row)
            if name == "vertex":
                verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
            elif name == "face":
                key = next(p for p, t in props if isinstance(t, tuple))
                if any(len(r[key]) != 3 for r in rows):
                    raise SceneError(f"{path}: non-triangular face")
                faces = np.array([r[key] for r in rows], dtype=np.int64)
    elif fmt in ("binary_little_endian", "binary_big_endian"):
        end = "<" if fmt == "binary_little_endian" else ">"
        offset = 0
        for name, count, props in elements:
            fields = []
            for pname, ptype in props:
                if isinstance(ptype, tuple):
                    # Only fixed-length (triangle) lists are supported in binary files.
                    fields.append((pname + "_n", end + ptype[1]))
                    fields.append((pname, end + ptype[2], (3,)))
                else:
                    fields.append((pname, end + ptype))
            dt = np.dtype(fields)
            arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            elif name == "face":
                key = next(p for p, t in props if isinstance(t, tuple))
                if np.any(arr[key + "_n"] != 3):
                    raise SceneError(f"{path}: non-triangular face")
                faces = arr[key].astype(np.int64)
    else:
        raise SceneError(f"{path}: unsupported PLY format {fmt!r}")
    if verts is None or faces is None:
        raise SceneError("empty mesh")
    return verts, faces


def write_mesh(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OBJ (1-based indices)."""
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a} {b} {c}\n")


# ---------------------------------------------------------------------------
# Cameras and georeference
# ---------------------------------------------------------------------------


def parse_timestamp(value) -> datetime:
    """Parse an ISO-8601 instant and return an aware UTC datetime."""
    if isinstance(value, datetime):
        ts = value
    else:
        text = str(value).strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        try:
            ts = datetime.fromisoformat(text)
        except ValueError as exc:
            raise SceneError(f"unparsable timestamp {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def rotation_defect(R) -> float:
    R = np.asarray(R, dtype=np.float64)
    return float(np.abs(R.T @ R - np.eye(3)).max())


def check_rotation(R, tol: float = ROTATION_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(R)):
        raise SceneError("rotation has non-finite entries")
    if rotation_defect(R) > tol:
        raise SceneError(f"rotation not orthonormal (defect {rotation_defect(R):.3g})")
    if np.linalg.det(R) < 0:
        raise SceneError("improper rotation (det = -1)")
    return R


@dataclass(frozen=True, eq=False)
class CameraView:
    """Undistorted pinhole camera.

    ``rotation`` maps world to camera coordinates, ``x_cam = R (X - center)``.
    The camera looks along +z with image x to the right and y down; pixel
    ``(u, v)`` spans ``[u, u+1) x [v, v+1)`` in continuous image coordinates.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    center: np.ndarray
    timestamp: datetime
    image: str | None = None
    name: str = ""
    transfer: str = "linear"

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise SceneError("camera dimensions must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise SceneError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SceneError("principal point outside the image")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "timestamp", parse_timestamp(self.timestamp))

    @classmethod
    def look_at(cls, center, target, width, height, fx, fy=None, cx=None, cy=None,
                up=(0.0, 0.0, 1.0), timestamp="2000-01-01T12:00:00Z", **kw) -> "CameraView":
        center = np.asarray(center, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - center
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        x = np.cross(z, up)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [0.0, 1.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(width, height, fx, fx if fy is None else fy,
                   width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy,
                   R, center, timestamp, **kw)

    @property
    def shape(self):
        return self.height, self.width

    def replace(self, **changes) -> "CameraView":
        from dataclasses import replace

        return replace(self, **changes)

    def pixel_directions(self):
        """Camera-frame ray directions through pixel centers, shape (H, W, 3), z = 1."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = u[None, :]
        d[..., 1] = v[:, None]
        d[..., 2] = 1.0
        return d

    def world_rays(self):
        """Unit world-frame ray directions (H, W, 3) and the matching camera-z cosine."""
        d_cam = self.pixel_directions()
        norm = np.linalg.norm(d_cam, axis=-1)
        d_world = d_cam @ self.rotation / norm[..., None]
        return d_world, 1.0 / norm

    def to_camera(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation.T

    def project(self, points):
        """Project world points; returns continuous (u, v) and camera depth z."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return u, v, z

    def unproject(self, depth):
        """World points for every pixel center at the given camera-z depth (H, W)."""
        pc = self.pixel_directions() * np.asarray(depth, dtype=np.float64)[..., None]
        return pc @ self.rotation + self.center

    def to_record(self) -> dict:
        rec = {
            "width": self.width, "height": self.height,
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "rotation": [float(x) for x in self.rotation.ravel()],
            "center": [float(x) for x in self.center],
            "timestamp": format_timestamp(self.timestamp),
        }
        if self.image is not None:
            rec["image"] = str(self.image)
        if self.name:
            rec["name"] = self.name
        if self.transfer != "linear":
            rec["transfer"] = self.transfer
        return rec


@dataclass(frozen=True)
class GeoRef:
    latitude: float
    longitude: float
    enu_origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise SceneError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise SceneError(f"longitude out of range: {self.longitude}")
        object.__setattr__(self, "enu_origin", tuple(float(x) for x in self.enu_origin))


# ---------------------------------------------------------------------------
# Project file
# ---------------------------------------------------------------------------

DEFAULT_SKY_SIGMA_DEG = 45.0
DEFAULT_HEMI_SAMPLES = 1024


@dataclass(frozen=True, eq=False)
class ProjectConfig:
    mesh: Path
    georef: GeoRef
    views: list
    sky_sigma: float = np.deg2rad(DEFAULT_SKY_SIGMA_DEG)
    hemi_samples: int = DEFAULT_HEMI_SAMPLES
    exposure_scale: float = 1.0
    seed: int = 0
    sun_psi: tuple = (1.0, 1.0, 1.0)
    pair_filter: dict = field(default_factory=dict)
    refine: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.hemi_samples < 1:
            raise SceneError("hemi_samples must be >= 1")
        if not self.sky_sigma > 0:
            raise SceneError("sky sigma must be > 0")
        if not self.exposure_scale > 0:
            raise SceneError("exposure_scale must be > 0")

    def view(self, key) -> CameraView:
        """Look a view up by index or name."""
        if isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
            return self.views[int(key)]
        for v in self.views:
            if v.name == key:
                return v
        raise KeyError(f"no view named {key!r}")

    def image_path(self, view: CameraView) -> Path:
        return (self.base_dir / view.image) if view.image else None


_PROJECT_KEYS = {
    "mesh", "latitude", "longitude", "enu_origin", "views", "sky_sigma_deg", "hemi_samples",
    "seed", "exposure_scale", "sun_psi", "pair_filter", "refine",
}
_VIEW_KEYS = {"image", "width", "height", "fx", "fy", "cx", "cy", "rotation", "center",
              "timestamp", "name", "transfer"}


def view_from_record(rec: dict, index: int = 0) -> CameraView:
    missing = {"width", "height", "fx", "fy", "cx", "cy", "rotation", "center", "timestamp"} - rec.keys()
    if missing:
        raise SceneError(f"view {index}: missing fields {sorted(missing)}")
    unknown = rec.keys() - _VIEW_KEYS
    if unknown:
        raise SceneError(f"view {index}: unknown fields {sorted(unknown)}")
    rot = np.asarray(rec["rotation"], dtype=np.float64)
    if rot.size != 9:
        raise SceneError(f"view {index}: rotation needs 9 values")
    center = np.asarray(rec["center"], dtype=np.float64)
    if center.size != 3:
        raise SceneError(f"view {index}: center needs 3 values")
    return CameraView(
        width=int(rec["width"]), height=int(rec["height"]),
        fx=float(rec["fx"]), fy=float(rec["fy"]), cx=float(rec["cx"]), cy=float(rec["cy"]),
        rotation=rot.reshape(3, 3), center=center,
        timestamp=parse_timestamp(rec["timestamp"]),
        image=rec.get("image"), name=str(rec.get("name", f"view{index:03d}")),
        transfer=rec.get("transfer", "linear"),
    )


def load_project(path) -> ProjectConfig:
    """Load and validate a YAML (or JSON) project file."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise SceneError("project file must be a mapping")
    unknown = doc.keys() - _PROJECT_KEYS
    if unknown:
        raise SceneError(f"unknown project fields {sorted(unknown)}")
    for key in ("mesh", "latitude", "longitude", "views"):
        if key not in doc:
            raise SceneError(f"project missing required field {key!r}")
    if not isinstance(doc["views"], list) or not doc["views"]:
        raise SceneError("project needs a non-empty views list")
    lat, lon = float(doc["latitude"]), float(doc["longitude"])
    georef = GeoRef(lat, lon, tuple(doc.get("enu_origin", (lat, lon, 0.0))))
    views = [view_from_record(rec, i) for i, rec in enumerate(doc["views"])]
    psi = tuple(float(x) for x in doc.get("sun_psi", (1.0, 1.0, 1.0)))
    if len(psi) != 3 or min(psi) < 0:
        raise SceneError("sun_psi must be three non-negative values")
    return ProjectConfig(
        mesh=Path(doc["mesh"]),
        georef=georef,
        views=views,
        sky_sigma=float(np.deg2rad(float(doc.get("sky_sigma_deg", DEFAULT_SKY_SIGMA_DEG)))),
        hemi_samples=int(doc.get("hemi_samples", DEFAULT_HEMI_SAMPLES)),
        exposure_scale=float(doc.get("exposure_scale", 1.0)),
        seed=int(doc.get("seed", 0)),
        sun_psi=psi,
        pair_filter=dict(doc.get("pair_filter") or {}),
        refine=dict(doc.get("refine") or {}),
        base_dir=path.parent,
    )


def save_project(config: ProjectConfig, path) -> None:
    doc = {
        "mesh": str(config.mesh),
        "latitude": config.georef.latitude,
        "longitude": config.georef.longitude,
        "enu_origin": list(config.georef.enu_origin),
        "sky_sigma_deg": float(np.rad2deg(config.sky_sigma)),
        "hemi_samples": config.hemi_samples,
        "seed": config.seed,
        "exposure_scale": config.exposure_scale,
        "sun_psi": list(config.sun_psi),
        "views": [v.to_record() for v in config.views],
    }
    if config.pair_filter:
        doc["pair_filter"] = dict(config.pair_filter)
    if config.refine:
        doc["refine"] = dict(config.refine)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Rasters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadianceImage:
    """Linear RGB radiance, (H, W, 3) float32."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = np.repeat(px[..., None], 3, axis=2)
        if px.ndim != 3 or px.shape[2] != 3:
            raise SceneError(f"radiance image must be (H, W, 3), got {px.shape}")
        px = np.ascontiguousarray(px, dtype=np.float32)
        if not np.all(np.isfinite(px)):
            raise SceneError("radiance image contains NaN or infinite pixels")
        if np.any(px < 0):
            raise SceneError("radiance image contains negative pixels")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape[:2]


def write_pfm(path, data) -> None:
    """Write a 1- or 3-channel float32 PFM (little-endian, rows bottom-to-top)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.size == 0:
        raise SceneError("empty image")
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise SceneError(f"cannot write array of shape {arr.shape} as PFM")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(body)


def read_pfm(path) -> np.ndarray:
    """Read a PFM; returns (H, W) or (H, W, 3) float32 with row 0 at the top."""
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise SceneError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        while len(dims) < 2:  # tolerate width/height split across lines
            dims += fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        channels = 3 if tag == b"PF" else 1
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        data = np.frombuffer(fh.read(w * h * channels * 4), dtype=dtype)
    if data.size != w * h * channels:
        raise SceneError(f"{path}: truncated PFM data")
    arr = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def _read_exr(path) -> np.ndarray:
    os.environ.setdefault("OPENCV_IO_ENABLE_OPENEXR", "1")
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED | cv2.IMREAD_ANYDEPTH)
    if img is None:
        raise SceneError(f"{path}: could not read EXR (OpenCV built without OpenEXR?)")
    if img.ndim == 3:
        img = img[..., 2::-1]
    return img.astype(np.float32)


def read_radiance_image(path, transfer: str = "linear", gamma: float = 2.2) -> RadianceImage:
    """Read linear radiance from PFM/EXR, or decode an 8/16-bit PNG with value**gamma."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    suffix = path.suffix.lower()
    if transfer not in ("linear", "srgb"):
        raise SceneError(f"unknown transfer {transfer!r}")
    if suffix == ".pfm":
        px = read_pfm(path)
    elif suffix == ".exr":
        px = _read_exr(path)
    elif suffix == ".png":
        if transfer != "srgb":
            raise SceneError("PNG input requires transfer=srgb")
        import cv2

        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise SceneError(f"{path}: unreadable PNG")
        if raw.dtype == np.uint8:
            maxval = 255.0
        elif raw.dtype == np.uint16:
            maxval = 65535.0
        else:
            raise SceneError(f"{path}: unsupported PNG depth {raw.dtype}")
        if raw.ndim == 3:
            raw = raw[..., 2::-1] if raw.shape[2] >= 3 else raw[..., 0]
        return RadianceImage(np.power(raw.astype(np.float64) / maxval, gamma))
    else:
        raise SceneError(f"unsupported image format: {suffix}")
    if transfer == "srgb":
        px = np.power(np.clip(px, 0, None).astype(np.float64), gamma)
    return RadianceImage(px)


def write_radiance_image(img: RadianceImage, path) -> None:
    if img.pixels.size == 0:
        raise SceneError("empty image")
    write_pfm(path, img.pixels)


def write_png8(path, data, gamma: float | None = None) -> None:
    """Write a [0, 1] float image (or a boolean mask) as 8-bit PNG."""
    import cv2

    arr = np.asarray(data)
    if arr.dtype == bool:
        out = arr.astype(np.uint8) * 255
    else:
        arr = np.clip(np.nan_to_num(arr.astype(np.float64)), 0.0, 1.0)
        if gamma:
            arr = arr ** (1.0 / gamma)
        out = np.round(arr * 255.0).astype(np.uint8)
    if out.ndim == 3:
        out = out[..., ::-1]
    if not cv2.imwrite(str(path), out):
        raise OSError(f"could not write {path}")


def read_mask_png(path) -> np.ndarray:
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise SceneError(f"{path}: unreadable mask")
    return raw > 127

"""End-to-end processing of a project with per-stage content-hash caching.

Each view goes through four stages, each writing its outputs under
``<out>/<view name>/``:

``buffers``  primary hits, sun visibility and shading terms (ray tracing)
``phi``      lit/shadow pairs and the sun-sky ratio
``refine``   continuous visibility near shadow edges
``recover``  albedo, shading and validity mask

A stage is skipped when its stamp file holds the same key and all its
outputs exist. Keys chain the upstream key with the stage's own inputs and
configuration, and a recomputed stage forces its dependents to rerun.
Downstream stages always read their inputs back from disk, so cached and
fresh runs produce the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .albedo import recover_albedo
from .calibration import PairFilterCriteria, PairSet, collect_pairs, estimate_phi, write_pairs_csv
from .ephemeris import sun_state
from .gbuffer import SkyModel, compute_buffers, read_gbuffer, write_gbuffer
from .refine import RefineParams, refine_visibility
from .scene_io import (CameraView, ProjectConfig, RadianceImage, load_mesh, load_project, read_pfm,
                       read_radiance_image, write_pfm, write_png8)
from .tracing import build_accel, default_threads

log = logging.getLogger(__name__)

CODE_VERSION = f"aeroalbedo-{__version__}"
STAGES = ("buffers", "phi", "refine", "recover")


class PipelineError(RuntimeError):
    pass


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(p)
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StageRecord:
    status: str
    seconds: float
    key: str

    def as_dict(self):
        return {"status": self.status, "seconds": round(self.seconds, 4), "key": self.key}


@dataclass
class ViewRecord:
    name: str
    status: str = "pending"
    error: str | None = None
    stages: dict = field(default_factory=dict)
    phi: list | None = None
    phi_std: list | None = None
    pair_count: int | None = None
    sun: dict | None = None
    artifacts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {
            "name": self.name, "status": self.status, "error": self.error,
            "stages": {k: v.as_dict() for k, v in self.stages.items()},
            "phi": self.phi, "phi_std": self.phi_std, "pair_count": self.pair_count,
            "sun": self.sun, "artifacts": self.artifacts, "warnings": self.warnings,
        }


@dataclass
class PipelineManifest:
    project: str
    out_dir: str
    options: dict
    views: list
    started: str
    seconds: float = 0.0

    @property
    def n_ok(self) -> int:
        return sum(v.status == "ok" for v in self.views)

    @property
    def exit_code(self) -> int:
        if self.views and self.n_ok == len(self.views):
            return 0
        return 1 if self.n_ok else 2

    def as_dict(self):
        return {
            "version": CODE_VERSION, "project": self.project, "out_dir": self.out_dir,
            "started": self.started, "seconds": round(self.seconds, 3), "options": self.options,
            "exit_code": self.exit_code, "views": [v.as_dict() for v in self.views],
        }

    def write(self, path) -> None:
        """Append this run to the manifest file (previous runs are kept)."""
        path = Path(path)
        doc = {"runs": []}
        if path.is_file():
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError:
                log.warning("manifest %s unreadable; starting a new one", path)
        doc.setdefault("runs", []).append(self.as_dict())
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2))
        tmp.replace(path)


class SceneCache:
    """Mesh and ray-intersection index, built at most once per run."""

    def __init__(self, project: ProjectConfig):
        self.project = project
        self.mesh_path = project.base_dir / project.mesh
        self._lock = threading.Lock()
        self._accel = None
        self._digest = None

    @property
    def digest(self) -> str:
        if self._digest is None:
            if not self.mesh_path.is_file():
                raise PipelineError(f"mesh not found: {self.mesh_path}")
            self._digest = file_digest(self.mesh_path)
        return self._digest

    def accel(self):
        with self._lock:
            if self._accel is None:
                self._accel = build_accel(load_mesh(self.mesh_path))
            return self._accel


class ViewRunner:
    """Runs (or reuses) the stages of a single view."""

    def __init__(self, project: ProjectConfig, view: CameraView, out_dir, scene: SceneCache,
                 threads: int = 1, force: bool = False):
        self.project = project
        self.view = view
        self.dir = Path(out_dir) / view.name
        self.scene = scene
        self.threads = max(1, int(threads))
        self.force = force
        self.record = ViewRecord(view.name)
        self.keys: dict = {}
        self._dirty = force
        self.criteria = PairFilterCriteria.from_dict(project.pair_filter)
        self.params = RefineParams.from_dict(project.refine)
        self.psi = np.asarray(project.sun_psi, dtype=np.float64)

    # -- paths ------------------------------------------------------------
    def path(self, name) -> Path:
        return self.dir / name

    def _stamp(self, stage) -> Path:
        return self.dir / ".stamps" / f"{stage}.key"

    STAGE_OUTPUTS = {
        "buffers": ["buffers/hit.pfm", "buffers/depth.pfm", "buffers/normal.pfm", "buffers/alpha0.pfm",
                    "buffers/s_sun.pfm", "buffers/s_sky.pfm", "sun.json"],
        "phi": ["phi.json", "pairs.csv"],
        "refine": ["alpha.pfm"],
        "recover": ["albedo.pfm", "shading.pfm", "valid.png"],
    }

    def _fresh(self, stage, key) -> bool:
        stamp = self._stamp(stage)
        if self._dirty or not stamp.is_file() or stamp.read_text().strip() != key:
            return False
        return all(self.path(p).is_file() for p in self.STAGE_OUTPUTS[stage])

    def _run_stage(self, stage, key, compute):
        t0 = time.perf_counter()
        self.keys[stage] = key
        if self._fresh(stage, key):
            status = "cached"
        else:
            self._stamp(stage).unlink(missing_ok=True)
            compute()
            self._stamp(stage).parent.mkdir(parents=True, exist_ok=True)
            self._stamp(stage).write_text(key + "\n")
            self._dirty = True       # dependents must rerun
            status = "computed"
        self.record.stages[stage] = StageRecord(status, time.perf_counter() - t0, key)
        for p in self.STAGE_OUTPUTS[stage]:
            self.record.artifacts[p] = str(self.path(p))
        log.info("[%s] %s %s", self.view.name, stage, status)

    # -- inputs -----------------------------------------------------------
    def sun(self):
        return sun_state(self.project.georef, self.view.timestamp, self.psi)

    def sky(self, phi=(0.0, 0.0, 0.0)) -> SkyModel:
        return SkyModel(phi, self.project.sky_sigma, self.project.hemi_samples, self.project.seed)

    def image_path(self) -> Path:
        p = self.project.image_path(self.view)
        if p is None or not p.is_file():
            raise PipelineError(f"image not found: {p}")
        return p

    def image(self) -> RadianceImage:
        img = read_radiance_image(self.image_path(), self.view.transfer)
        if img.shape != self.view.shape:
            raise PipelineError(f"image is {img.shape}, camera expects {self.view.shape}")
        if self.project.exposure_scale != 1.0:
            img = RadianceImage(img.pixels.astype(np.float64) * self.project.exposure_scale)
        return img

    def image_key(self) -> str:
        return _digest(file_digest(self.image_path()), self.project.exposure_scale, self.view.transfer)

    def gbuffer(self):
        return read_gbuffer(self.path("buffers"), self.view)

    # -- stages -----------------------------------------------------------
    def buffers_key(self) -> str:
        p = self.project
        return _digest(CODE_VERSION, "buffers", self.scene.digest, self.view.to_record(),
                       [p.georef.latitude, p.georef.longitude, list(p.georef.enu_origin)],
                       float(p.sky_sigma), p.hemi_samples, p.seed)

    def stage_buffers(self):
        sun = self.sun()
        self.record.sun = {"azimuth": sun.azimuth, "elevation": sun.elevation}
        if not sun.above_horizon:
            raise PipelineError(f"no lit pixels (sun {sun.elevation:.2f} deg below the horizon)")

        def compute():
            gb = compute_buffers(self.view, self.scene.accel(), sun.direction, self.sky(), self.threads)
            write_gbuffer(gb, self.path("buffers"))
            self.path("sun.json").write_text(json.dumps(
                {"azimuth": sun.azimuth, "elevation": sun.elevation,
                 "direction": [float(x) for x in sun.direction]}, indent=2))

        self._run_stage("buffers", self.buffers_key(), compute)
        gb = self.gbuffer()
        if not np.any(gb.v_sun[gb.hit] > 0.5):
            raise PipelineError("no lit pixels")
        return gb

    def phi_key(self, pooled_key=None) -> str:
        if pooled_key is not None:
            return _digest(CODE_VERSION, "phi", self.keys["buffers"], pooled_key)
        return _digest(CODE_VERSION, "phi", self.keys["buffers"], self.image_key(),
                       self.project.pair_filter)

    def pairs(self) -> PairSet:
        return collect_pairs(self.image(), self.gbuffer(), self.criteria)

    def _write_phi(self, est, pairs: PairSet, pooled: bool):
        doc = {"phi": [float(x) for x in est.phi], "std": [float(x) for x in est.std],
               "count": est.count, "trimmed_fraction": [float(x) for x in est.trimmed_fraction],
               "p_value": [None if not np.isfinite(x) else float(x) for x in est.p_value],
               "pooled": pooled}
        self.path("phi.json").write_text(json.dumps(doc, indent=2))
        write_pairs_csv(pairs, self.path("pairs.csv"))

    def stage_phi(self, pooled=None):
        """``pooled`` is ``(key, estimate)`` for a flight-wide ratio."""
        if pooled is not None:
            key, est = pooled

            def compute():
                self._write_phi(est, self.pairs(), True)
        else:
            key = self.phi_key()

            def compute():
                pairs = self.pairs()
                est = estimate_phi(pairs, self.criteria.min_pairs)
                self._write_phi(est, pairs, False)

        self._run_stage("phi", key if pooled is None else self.phi_key(key), compute)
        doc = json.loads(self.path("phi.json").read_text())
        self.record.phi, self.record.phi_std, self.record.pair_count = doc["phi"], doc["std"], doc["count"]
        pv = [p for p in doc["p_value"] if p is not None]
        if pv and min(pv) < 0.05:
            self.record.warnings.append(f"ratio samples deviate from a Gaussian (p = {min(pv):.3g})")
        return np.array(doc["phi"])

    def stage_refine(self, phi):
        key = _digest(CODE_VERSION, "refine", self.keys["phi"], self.project.refine, list(self.psi))

        def compute():
            out = refine_visibility(self.image(), self.gbuffer(), phi, self.psi, self.params)
            write_pfm(self.path("alpha.pfm"), out.alpha)
            if out.n_unconverged:
                self.record.warnings.append(
                    f"{out.n_unconverged} of {len(out.results)} transects reached the pass limit")

        self._run_stage("refine", key, compute)
        return read_pfm(self.path("alpha.pfm")).astype(np.float64)

    def stage_recover(self, phi, alpha, tonemap: bool = False):
        key = _digest(CODE_VERSION, "recover", self.keys["refine"], tonemap)
        if tonemap:
            self.STAGE_OUTPUTS = dict(self.STAGE_OUTPUTS, recover=self.STAGE_OUTPUTS["recover"]
                                      + ["albedo_preview.png", "shading_preview.png"])

        def compute():
            gb = self.gbuffer().replace(alpha=alpha)
            res = recover_albedo(self.image(), gb, phi, self.psi)
            write_pfm(self.path("albedo.pfm"), res.albedo.pixels)
            write_pfm(self.path("shading.pfm"), res.shading.pixels)
            write_png8(self.path("valid.png"), res.valid)
            if tonemap:
                write_png8(self.path("albedo_preview.png"), res.albedo.pixels, gamma=2.2)
                sh = res.shading.pixels
                write_png8(self.path("shading_preview.png"), sh / max(float(sh.max()), 1e-12), gamma=2.2)

        self._run_stage("recover", key, compute)

    def run(self, until: str = "recover", pooled=None, tonemap: bool = False,
            resume: bool = False) -> ViewRecord:
        """Run the stages up to ``until``; errors mark the view failed.

        ``resume`` continues after a previous ``run(until="buffers")``.
        """
        rec = self.record
        try:
            if not resume:
                self.stage_buffers()
            if until != "buffers":
                phi = self.stage_phi(pooled)
                if until != "phi":
                    alpha = self.stage_refine(phi)
                    if until != "refine":
                        self.stage_recover(phi, alpha, tonemap)
            rec.status = "ok"
        except Exception as exc:  # noqa: BLE001 - recorded per view
            rec.status = "failed"
            rec.error = str(exc)
            log.error("[%s] failed: %s", self.view.name, exc)
            log.debug("traceback", exc_info=True)
        return rec


def select_views(project: ProjectConfig, views=None) -> list:
    if not views:
        return list(project.views)
    return [project.view(v) for v in views]


def run_pipeline(project, out_dir, views=None, threads: int | None = None, pooled_phi: bool = False,
                 seed: int | None = None, force: bool = False, tonemap: bool = False,
                 until: str = "recover") -> PipelineManifest:
    """Process the selected views and append a run record to ``<out>/manifest.json``."""
    t0 = time.perf_counter()
    started = datetime.now(timezone.utc).isoformat()
    path = None
    if not isinstance(project, ProjectConfig):
        path = Path(project)
        project = load_project(path)
    if seed is not None:
        from dataclasses import replace

        project = replace(project, seed=int(seed))
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = int(threads or default_threads())
    selected = select_views(project, views)
    workers = max(1, min(len(selected), threads))
    per_view = max(1, threads // workers)
    scene = SceneCache(project)
    runners = [ViewRunner(project, v, out, scene, per_view, force) for v in selected]

    def in_pool(fn):
        if workers == 1:
            return [fn(r) for r in runners]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, runners))

    if pooled_phi and until != "buffers":
        in_pool(lambda r: r.run(until="buffers"))
        live = [r for r in runners if r.record.status == "ok"]
        pooled = None
        if live:
            try:
                pooled = _pooled_estimate(live)
            except Exception as exc:  # noqa: BLE001
                for r in live:
                    r.record.status, r.record.error = "failed", f"pooled ratio: {exc}"
        if pooled is not None:
            for r in live:
                r.record.status = "pending"
            in_pool(lambda r: r.run(until=until, pooled=pooled, tonemap=tonemap, resume=True)
                    if r.record.status == "pending" else r.record)
    else:
        in_pool(lambda r: r.run(until=until, tonemap=tonemap))

    manifest = PipelineManifest(
        project=str(path) if path else "<in-memory>", out_dir=str(out),
        options={"threads": threads, "pooled_phi": pooled_phi, "seed": project.seed,
                 "views": [v.name for v in selected], "until": until, "tonemap": tonemap},
        views=[r.record for r in runners], started=started,
    )
    manifest.seconds = time.perf_counter() - t0
    manifest.write(out / "manifest.json")
    return manifest


def _pooled_estimate(runners):
    sets, keys = [], []
    for r in runners:
        sets.append(r.pairs())
        keys.append([r.keys["buffers"], r.image_key()])
    crit = runners[0].criteria
    pooled = PairSet.concat(sets)
    est = estimate_phi(pooled, crit.min_pairs)
    key = _digest(CODE_VERSION, "pooled", keys, runners[0].project.pair_filter)
    return key, est

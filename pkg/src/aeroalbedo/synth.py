"""Write a complete synthetic project (mesh, rendered views, ground truth)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from .ephemeris import sun_state
from .gbuffer import SkyModel
from .render import PRESETS, generate_test_scene, render_lambertian
from .scene_io import CameraView, GeoRef, ProjectConfig, save_project, write_mesh, write_pfm, write_png8
from .tracing import build_accel

DEFAULT_SYNTH = {
    "preset": "low-rise",
    "sun_radius_deg": 0.0,
    "latitude": 40.0,
    "longitude": -83.0,
    "phi": [0.22, 0.28, 0.38],
    "sun_psi": [1.0, 1.0, 1.0],
    "sky_sigma_deg": 45.0,
    "hemi_samples": 1024,
    "render_seed": 12345,
    "seed": 0,
    "views": [
        {"name": "morning", "center": [10, -50, 120], "target": [0, 0, 0], "width": 256, "height": 256,
         "fx": 420, "timestamp": "2023-06-21T14:00:00Z"},
    ],
}


def load_synth_spec(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    return {**DEFAULT_SYNTH, **doc}


def synthesize_project(spec: dict, out_dir, n_threads=None) -> Path:
    """Render every view of ``spec`` and write a ready-to-run project.

    Layout: ``mesh.obj``, ``project.yaml``, ``images/<view>.pfm`` and
    ``truth/<view>/{albedo,depth,normal,visibility}.pfm``.
    Returns the project file path.
    """
    spec = {**DEFAULT_SYNTH, **spec}
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if "boxes" in spec or "ground" in spec:
        scene_spec = {k: spec[k] for k in ("ground", "boxes") if k in spec}
    else:
        scene_spec = PRESETS[spec["preset"]]
    scene = generate_test_scene({**scene_spec, "sun_radius_deg": spec["sun_radius_deg"]})
    write_mesh(scene.mesh, out / "mesh.obj")
    accel = build_accel(scene.mesh)
    georef = GeoRef(float(spec["latitude"]), float(spec["longitude"]))
    sky = SkyModel(spec["phi"], np.deg2rad(spec["sky_sigma_deg"]), spec["hemi_samples"], spec["render_seed"])

    views = []
    for rec in spec["views"]:
        cam = CameraView.look_at(rec["center"], rec.get("target", (0, 0, 0)), rec["width"], rec["height"],
                                 rec["fx"], timestamp=rec["timestamp"], name=rec["name"],
                                 image=f"images/{rec['name']}.pfm")
        sun = sun_state(georef, cam.timestamp, spec["sun_psi"])
        res = render_lambertian(scene, cam, sun, sky, accel, n_threads)
        write_pfm(out / cam.image, res.image.pixels)
        truth = out / "truth" / cam.name
        truth.mkdir(parents=True, exist_ok=True)
        write_pfm(truth / "albedo.pfm", res.albedo)
        write_pfm(truth / "depth.pfm", np.nan_to_num(res.depth))
        write_pfm(truth / "normal.pfm", np.nan_to_num(res.normal))
        write_pfm(truth / "visibility.pfm", res.visibility)
        write_png8(truth / "hit.png", res.hit)
        (truth / "sun.json").write_text(json.dumps({"azimuth": sun.azimuth, "elevation": sun.elevation}))
        views.append(cam)

    project = ProjectConfig(
        mesh=Path("mesh.obj"), georef=georef, views=views,
        sky_sigma=float(np.deg2rad(spec["sky_sigma_deg"])), hemi_samples=int(spec["hemi_samples"]),
        seed=int(spec["seed"]), sun_psi=tuple(spec["sun_psi"]),
        pair_filter=dict(spec.get("pair_filter") or {}), refine=dict(spec.get("refine") or {}),
    )
    path = out / "project.yaml"
    save_project(project, path)
    (out / "truth" / "phi.json").write_text(json.dumps({"phi": list(map(float, spec["phi"]))}))
    return path

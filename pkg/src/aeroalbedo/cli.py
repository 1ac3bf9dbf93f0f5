"""Command-line interface: ``aeroalbedo <command> ...``.

Commands print human-readable lines followed by CSV rows (or write the CSV
to ``--csv FILE``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("aeroalbedo")


def _emit(args, text_lines, rows):
    for line in text_lines:
        print(line)
    if not rows:
        return
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    wr.writeheader()
    wr.writerows(rows)
    if getattr(args, "csv", None):
        Path(args.csv).write_text(buf.getvalue())
    else:
        print()
        sys.stdout.write(buf.getvalue())


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise SystemExit(f"error: missing required option(s): {', '.join('--' + m for m in missing)}")


def _read_image(path):
    from .scene_io import read_mask_png, read_pfm, read_radiance_image

    p = Path(path)
    if p.suffix.lower() == ".png":
        return read_mask_png(p)
    if p.suffix.lower() == ".pfm":
        return read_pfm(p).astype(np.float64)
    return read_radiance_image(p).pixels.astype(np.float64)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sun(args):
    from .ephemeris import sun_state
    from .scene_io import GeoRef, load_project

    rows = []
    if args.project:
        project = load_project(args.project)
        views = [project.view(args.view)] if args.view is not None else project.views
        targets = [(v.name, project.georef, v.timestamp) for v in views]
    else:
        _need(args, "lat", "lon", "time")
        targets = [("-", GeoRef(args.lat, args.lon), args.time)]
    lines = []
    for name, geo, ts in targets:
        s = sun_state(geo, ts)
        lines.append(f"{name}: azimuth {s.azimuth:.4f} deg, elevation {s.elevation:.4f} deg")
        rows.append({"view": name, "timestamp": str(ts), "azimuth_deg": f"{s.azimuth:.6f}",
                     "elevation_deg": f"{s.elevation:.6f}",
                     "east": f"{s.direction[0]:.9f}", "north": f"{s.direction[1]:.9f}", "up": f"{s.direction[2]:.9f}"})
    _emit(args, lines, rows)
    return 0


def _stage(args, until):
    from .pipeline import run_pipeline

    _need(args, "project", "out")
    views = [args.view] if getattr(args, "view", None) is not None else getattr(args, "views", None)
    m = run_pipeline(args.project, args.out, views=views, threads=args.threads,
                     pooled_phi=getattr(args, "pooled_phi", False), seed=args.seed,
                     force=getattr(args, "force", False), tonemap=getattr(args, "tonemap", False),
                     until=until)
    lines, rows = [], []
    for v in m.views:
        stages = ", ".join(f"{k} {r.status}" for k, r in v.stages.items())
        if v.status == "ok":
            lines.append(f"{v.name}: ok ({stages})")
        else:
            lines.append(f"{v.name}: FAILED: {v.error}")
        row = {"view": v.name, "status": v.status}
        if v.phi is not None:
            row.update({f"phi_{c}": f"{x:.6f}" for c, x in zip("rgb", v.phi)})
            row.update({f"std_{c}": f"{x:.6f}" for c, x in zip("rgb", v.phi_std)})
            row["pairs"] = v.pair_count
        row["error"] = v.error or ""
        rows.append(row)
        for w in v.warnings:
            lines.append(f"  warning: {w}")
    lines.append(f"manifest: {Path(args.out) / 'manifest.json'} ({m.seconds:.1f} s)")
    if until == "phi" and getattr(args, "pairs_csv", None):
        import shutil

        for v in m.views:
            if v.status == "ok":
                shutil.copyfile(Path(args.out) / v.name / "pairs.csv", args.pairs_csv)
    _emit(args, lines, rows)
    return m.exit_code


def cmd_synth(args):
    from .synth import load_synth_spec, synthesize_project

    _need(args, "out")
    spec = load_synth_spec(args.spec) if args.spec else {}
    if args.seed is not None:
        spec["render_seed"] = args.seed
    path = synthesize_project(spec, args.out, n_threads=args.threads)
    _emit(args, [f"project written to {path}"], [{"project": str(path)}])
    return 0


def cmd_relight(args):
    from .ephemeris import SunState, sun_state
    from .gbuffer import SkyModel
    from .render import relight
    from .scene_io import load_mesh, load_project, read_pfm, write_pfm
    from .tracing import build_accel

    _need(args, "project", "albedo", "out")
    project = load_project(args.project)
    view = project.view(args.view if args.view is not None else 0)
    sun = sun_state(project.georef, args.time or view.timestamp, project.sun_psi)
    if args.mirror_azimuth:
        sun = SunState.from_angles(sun.azimuth + 180.0, sun.elevation, sun.psi, sun.timestamp)
    phi = args.phi if args.phi else json.loads(Path(args.phi_from).read_text())["phi"] if args.phi_from else None
    if phi is None:
        raise SystemExit("error: relight needs --phi R G B or --phi-from phi.json")
    accel = build_accel(load_mesh(project.base_dir / project.mesh))
    sky = SkyModel(phi, project.sky_sigma, project.hemi_samples, project.seed if args.seed is None else args.seed)
    img = relight(read_pfm(args.albedo).astype(np.float64), view, accel, sun, sky,
                  ambient_only=args.ambient_only, n_threads=args.threads)
    write_pfm(args.out, img.pixels)
    _emit(args, [f"relit {view.name}: sun az {sun.azimuth:.2f} el {sun.elevation:.2f} -> {args.out}"],
          [{"view": view.name, "azimuth_deg": f"{sun.azimuth:.4f}", "elevation_deg": f"{sun.elevation:.4f}",
            "out": args.out}])
    return 0


def cmd_evaluate(args):
    from .evaluation import lmse, smse

    est, gt = _read_image(args.est), _read_image(args.gt)
    mask = _read_image(args.mask) if args.mask else None
    s = smse(est, gt, mask)
    lm = lmse(est, gt, mask, window=args.window, stride=args.stride)
    _emit(args, [f"SMSE {s:.6g}", f"LMSE {lm:.6g}"],
          [{"estimate": args.est, "truth": args.gt, "smse": f"{s:.9g}", "lmse": f"{lm:.9g}"}])
    return 0


def cmd_consistency(args):
    from .evaluation import temporal_consistency

    stack = [_read_image(p) for p in args.stack]
    mask = _read_image(args.mask) if args.mask else None
    st = temporal_consistency(stack, mask, normalize=args.normalize)
    row = {k: f"{v:.6g}" for k, v in st.as_row().items()}
    _emit(args, [f"25th {st.p25:.3f}  median {st.median:.3f}  75th {st.p75:.3f}  "
                 f"max {st.max:.3f}  std {st.std:.3f}  (0-255 scale)"], [row])
    return 0


def cmd_change(args):
    from .evaluation import change_detect
    from .scene_io import write_png8

    ref, src = _read_image(args.ref), _read_image(args.src)
    mask = _read_image(args.mask) if args.mask else None
    cm = change_detect(ref, src, args.tau, args.radius, mask)
    if args.out:
        write_png8(args.out, cm.mask.astype(bool))
    frac = cm.count / cm.mask.size
    _emit(args, [f"changed pixels: {cm.count} ({100 * frac:.2f}%)"],
          [{"reference": args.ref, "source": args.src, "tau": cm.tau, "radius": cm.radius,
            "changed": cm.count, "fraction": f"{frac:.6f}"}])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--project", default=argparse.SUPPRESS, help="project file (YAML or JSON)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory or file")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the sampling seed")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="thread cap (default: AEROALBEDO_THREADS or CPU count)")
    g.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)
    g.add_argument("--csv", default=argparse.SUPPRESS, help="write CSV rows to this file")

    p = argparse.ArgumentParser(prog="aeroalbedo", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    s = add("sun", "sun azimuth/elevation for views or a given place and time")
    s.add_argument("--view")
    s.add_argument("--lat", type=float)
    s.add_argument("--lon", type=float)
    s.add_argument("--time")
    s.set_defaults(func=cmd_sun)

    for name, help_ in (("buffers", "trace geometry buffers"), ("phi", "estimate the sun-sky ratio"),
                        ("refine", "refine sun visibility near shadow edges"),
                        ("recover", "recover albedo and shading")):
        s = add(name, help_)
        s.add_argument("--view", required=True)
        s.add_argument("--force", action="store_true", help="ignore cached stages")
        if name == "phi":
            s.add_argument("--pairs-csv", help="copy accepted pairs to this CSV")
        if name == "recover":
            s.add_argument("--tonemap", action="store_true", help="also write gamma-2.2 8-bit previews")
        s.set_defaults(func=lambda a, _n=name: _stage(a, _n))

    s = add("run", "full pipeline for all (or selected) views")
    s.add_argument("--views", nargs="+")
    s.add_argument("--pooled-phi", action="store_true", help="one sun-sky ratio for all views")
    s.add_argument("--force", action="store_true")
    s.add_argument("--tonemap", action="store_true")
    s.set_defaults(func=lambda a: _stage(a, "recover"))

    s = add("synth", "render a synthetic project with ground truth")
    s.add_argument("--spec", help="YAML scene/camera spec (defaults to the low-rise preset)")
    s.set_defaults(func=cmd_synth)

    s = add("relight", "render recovered albedo under a new sun")
    s.add_argument("--albedo", required=True)
    s.add_argument("--view")
    s.add_argument("--time", help="new UTC timestamp")
    s.add_argument("--phi", type=float, nargs=3)
    s.add_argument("--phi-from", help="phi.json from a previous run")
    s.add_argument("--ambient-only", action="store_true")
    s.add_argument("--mirror-azimuth", action="store_true")
    s.set_defaults(func=cmd_relight)

    s = add("evaluate", "SMSE / LMSE against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mask")
    s.add_argument("--window", type=int, default=20)
    s.add_argument("--stride", type=int, default=10)
    s.set_defaults(func=cmd_evaluate)

    s = add("consistency", "deviation statistics of a co-registered stack")
    s.add_argument("--stack", nargs="+", required=True)
    s.add_argument("--mask")
    s.add_argument("--normalize", action="store_true", help="scale each image to mean 0.5 first")
    s.set_defaults(func=cmd_consistency)

    s = add("change", "differencing change detection")
    s.add_argument("--ref", required=True)
    s.add_argument("--src", required=True)
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--radius", type=int, default=2)
    s.add_argument("--mask")
    s.set_defaults(func=cmd_change)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("project", None), ("out", None), ("seed", None), ("threads", None),
                          ("verbose", 0), ("csv", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        os.environ["AEROALBEDO_THREADS"] = str(args.threads)
    try:
        return int(args.func(args) or 0)
    except (ValueError, OSError, KeyError) as exc:
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

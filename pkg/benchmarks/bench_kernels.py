"""Compare the compiled and pure-Python ray-tracing backends.

Usage: ``python benchmarks/bench_kernels.py [--size 128] [--samples 64] [--repeat 3]``

Times primary visibility, sun occlusion and sky shading on the low-rise
preset and checks that both backends return the same buffers.
"""

import argparse
import time

import numpy as np

from aeroalbedo.ephemeris import sun_state
from aeroalbedo.gbuffer import SkyModel, sky_shading, sun_visibility, trace_primary
from aeroalbedo.render import preset_scene
from aeroalbedo.scene_io import CameraView, GeoRef
from aeroalbedo.tracing import available_backends, build_accel, use_backend


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(backend, size, samples, repeat):
    scene = preset_scene("low-rise")
    cam = CameraView.look_at((10, -50, 120), (0, 0, 0), size, size, 420 * size / 256,
                             timestamp="2023-06-21T14:00:00Z")
    sun = sun_state(GeoRef(40.0, -83.0), cam.timestamp)
    sky = SkyModel((0.22, 0.28, 0.38), n_samples=samples)
    with use_backend(backend):
        t_build, acc = best_of(lambda: build_accel(scene.mesh), repeat)
        t_prim, gb = best_of(lambda: trace_primary(cam, acc, 1), repeat)
        t_sun, vis = best_of(lambda: sun_visibility(gb, acc, sun.direction, 1), repeat)
        t_sky, s_sky = best_of(lambda: sky_shading(gb, acc, sun.direction, sky, 1), repeat)
    times = {"build": t_build, "primary": t_prim, "sun": t_sun, "sky": t_sky}
    return times, (gb.triangle, vis, s_sky)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = available_backends()
    results = {b: run(b, args.size, args.samples, args.repeat) for b in backends}
    stages = list(next(iter(results.values()))[0])
    print(f"{args.size}x{args.size} view, {args.samples} sky samples, one thread, best of {args.repeat}")
    print(f"{'stage':<10}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for s in stages:
        row = f"{s:<10}" + "".join(f"{results[b][0][s]:>11.3f}s" for b in backends)
        if "compiled" in results and "python" in results:
            row += f"{results['python'][0][s] / results['compiled'][0][s]:>11.1f}x"
        print(row)
    if len(backends) > 1:
        ref = results[backends[0]][1]
        for b in backends[1:]:
            tri, vis, sky = (np.nan_to_num(y) for y in results[b][1])
            print(f"{b} vs {backends[0]}: triangle ids equal {np.array_equal(tri, ref[0])}, "
                  f"sun visibility equal {np.array_equal(vis, ref[1])}, "
                  f"sky shading max |diff| {np.abs(sky - np.nan_to_num(ref[2])).max():.1e}")


if __name__ == "__main__":
    main()

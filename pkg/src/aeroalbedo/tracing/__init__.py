"""Ray-intersection index and tracing backends.

The compiled core (``_ctrace``) is used when it was built; otherwise the
numpy fallback is selected at import. Set ``AEROALBEDO_BACKEND=python`` to
force the fallback.
"""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import dataclass

import numpy as np

from ..scene_io import SceneError, TriangleMesh
from . import _pytrace
from .bvh import FlatBVH, build_flat_bvh

log = logging.getLogger(__name__)

try:
    from . import _ctrace
except ImportError:  # extension not built
    _ctrace = None

_BACKENDS = {"python": _pytrace}
if _ctrace is not None:
    _BACKENDS["compiled"] = _ctrace

_active = "compiled" if _ctrace is not None else "python"
if os.environ.get("AEROALBEDO_BACKEND"):
    _active = os.environ["AEROALBEDO_BACKEND"]
    if _active not in _BACKENDS:
        raise ImportError(f"tracing backend {_active!r} unavailable (have {sorted(_BACKENDS)})")


def available_backends():
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def default_threads() -> int:
    env = os.environ.get("AEROALBEDO_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class AccelStructure:
    mesh: TriangleMesh
    bvh: FlatBVH
    diagonal: float

    @property
    def offset(self) -> float:
        """Self-intersection offset along the surface normal."""
        return 1e-4 * self.diagonal

    def intersect(self, origins, directions, tmax=np.inf, n_threads=None):
        """Nearest hit: returns (t, triangle id); t = inf and id = -1 on a miss."""
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        t, slot = kernels().trace_nearest(self.bvh, o, d, float(tmax), n_threads or default_threads())
        tri = np.where(slot >= 0, self.bvh.tri_index[np.maximum(slot, 0)], -1)
        return t, tri

    def occluded(self, origins, directions, tmax=np.inf, n_threads=None):
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        return kernels().trace_occluded(self.bvh, o, d, float(tmax), n_threads or default_threads())


def build_accel(mesh: TriangleMesh) -> AccelStructure:
    if mesh is None or mesh.n_triangles == 0:
        raise SceneError("empty mesh")
    a, b, c = mesh.corners()
    diag = mesh.diagonal()
    bvh = build_flat_bvh(a, b, c, pad=1e-9 * max(diag, 1.0))
    return AccelStructure(mesh=mesh, bvh=bvh, diagonal=diag)


__all__ = [
    "AccelStructure", "build_accel", "available_backends", "backend_name", "kernels",
    "set_backend", "use_backend", "default_threads",
]

import numpy as np
import pytest

from aeroalbedo.scene_io import SceneError, TriangleMesh
from aeroalbedo.tracing import available_backends, backend_name, build_accel, use_backend
from aeroalbedo.tracing.bvh import build_flat_bvh
from aeroalbedo.tracing.sampling import hemisphere_table, pixel_streams, radical_inverse2, tangent_frames

from conftest import random_triangles

BACKENDS = available_backends()


def brute_nearest(mesh, origins, dirs):
    """All-triangle Moller-Trumbore scan; returns (t, triangle id)."""
    a, b, c = mesh.corners()
    e1, e2 = b - a, c - a
    t_out = np.full(len(origins), np.inf)
    id_out = np.full(len(origins), -1)
    for k, (o, d) in enumerate(zip(origins, dirs)):
        p = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            s = o - a
            u = np.einsum("ij,ij->i", s, p) * inv
            q = np.cross(s, e1)
            v = (q @ d) * inv
            t = np.einsum("ij,ij->i", e2, q) * inv
        ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        if ok.any():
            j = np.flatnonzero(ok)[np.argmin(t[ok])]
            t_out[k], id_out[k] = t[j], j
    return t_out, id_out


def random_rays(rng, n, spread=15.0):
    o = rng.uniform(-spread, spread, (n, 3))
    target = rng.uniform(-8, 8, (n, 3))
    d = target - o
    return o, d / np.linalg.norm(d, axis=1, keepdims=True)


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_triangle_centroid(backend):
    mesh = TriangleMesh(np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0.0]]), [[0, 1, 2]])
    acc = build_accel(mesh)
    with use_backend(backend):
        t, tri = acc.intersect([[1, 1, 5.0]], [[0, 0, -1.0]])
        miss_t, miss = acc.intersect([[1, 1, 5.0]], [[0, 0, 1.0]])
    assert tri[0] == 0 and t[0] == pytest.approx(5.0)
    assert miss[0] == -1 and np.isinf(miss_t[0])


@pytest.mark.parametrize("backend", BACKENDS)
def test_matches_brute_force(backend, rng):
    n_tri, n_ray = (10000, 1000) if backend == "compiled" else (2000, 300)
    mesh = random_triangles(rng, n_tri)
    o, d = random_rays(rng, n_ray)
    acc = build_accel(mesh)
    with use_backend(backend):
        t, tri = acc.intersect(o, d, n_threads=2)
        occ = acc.occluded(o, d)
    t_ref, id_ref = brute_nearest(mesh, o, d)
    np.testing.assert_array_equal(tri, id_ref)
    np.testing.assert_allclose(t[id_ref >= 0], t_ref[id_ref >= 0], rtol=1e-12)
    np.testing.assert_array_equal(occ, id_ref >= 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_occluded_respects_tmax(backend):
    mesh = TriangleMesh(np.array([[-1, -1, 2], [1, -1, 2], [0, 1, 2.0]]), [[0, 1, 2]])
    acc = build_accel(mesh)
    with use_backend(backend):
        assert acc.occluded([[0, 0, 0.0]], [[0, 0, 1.0]], tmax=3.0)[0]
        assert not acc.occluded([[0, 0, 0.0]], [[0, 0, 1.0]], tmax=1.5)[0]


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled core not built")
def test_backends_identical(rng):
    mesh = random_triangles(rng, 500)
    o, d = random_rays(rng, 400)
    acc = build_accel(mesh)
    out = {}
    for b in BACKENDS:
        with use_backend(b):
            out[b] = acc.intersect(o, d) + (acc.occluded(o, d),)
    (tc, ic, oc), (tp, ip, op) = out["compiled"], out["python"]
    np.testing.assert_array_equal(ic, ip)
    np.testing.assert_array_equal(oc, op)
    # evaluation order differs, so distances may differ in the last ulp
    np.testing.assert_allclose(tc, tp, rtol=1e-13)


def test_default_backend_prefers_compiled():
    assert backend_name() == ("compiled" if "compiled" in BACKENDS else "python")


def test_empty_mesh_rejected():
    with pytest.raises(SceneError):
        build_accel(None)


def test_bvh_reaches_every_triangle(rng):
    mesh = random_triangles(rng, 777)
    bvh = build_flat_bvh(*mesh.corners())
    assert sorted(bvh.tri_index.tolist()) == list(range(777))


def test_hemisphere_table_properties():
    u, c, s = hemisphere_table(1024)
    assert np.all((u > 0) & (u < 1))
    np.testing.assert_allclose(c ** 2 + s ** 2, 1.0)
    # base-2 radical inverse of 0..7
    np.testing.assert_array_equal(radical_inverse2(np.arange(8)), [0, .5, .25, .75, .125, .625, .375, .875])


def test_pixel_streams_deterministic():
    a = pixel_streams(3, np.arange(100))
    b = pixel_streams(3, np.arange(100))
    c = pixel_streams(4, np.arange(100))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], c[0])
    assert np.all((a[0] >= 0) & (a[0] < 1))


def test_tangent_frames_orthonormal(rng):
    n = rng.normal(size=(500, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    n[0] = [0, 0, -1]
    n[1] = [0, 0, 1]
    t, b = tangent_frames(n)
    for x, y in ((t, b), (t, n), (b, n)):
        np.testing.assert_allclose(np.einsum("ij,ij->i", x, y), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0)
    np.testing.assert_allclose(np.cross(t, b), n, atol=1e-12)

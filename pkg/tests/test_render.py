import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from aeroalbedo.albedo import recover_albedo
from aeroalbedo.ephemeris import SunState, sun_state
from aeroalbedo.gbuffer import SkyModel, sun_visibility, trace_primary
from aeroalbedo.render import PRESETS, generate_test_scene, preset_scene, relight, render_lambertian, shade
from aeroalbedo.scene_io import SceneError
from aeroalbedo.tracing import build_accel

from conftest import GEO, MORNING, PHI, fixture_camera, nadir_camera, wall_distance

SKY = SkyModel(PHI, n_samples=128, seed=11)


@pytest.fixture(scope="module")
def lowrise():
    scene = preset_scene("low-rise")
    acc = build_accel(scene.mesh)
    cam = fixture_camera(64)
    sun = sun_state(GEO, MORNING)
    return scene, acc, cam, sun, render_lambertian(scene, cam, sun, SKY, acc)


def test_plane_only_mesh():
    s = generate_test_scene({"boxes": []})
    assert s.mesh.n_triangles == 2
    assert np.all(s.albedo == s.albedo[0])


def test_plane_plus_box():
    s = generate_test_scene({"boxes": [{"center": [0, 0], "size": [1, 1, 1]}]})
    assert s.mesh.n_triangles == 14


def test_box_seated_and_watertight():
    s = generate_test_scene({"boxes": [{"center": [3, 4], "size": [2, 2, 5]}]})
    v = s.mesh.vertices[s.mesh.triangles[2:]].reshape(-1, 3)
    assert v[:, 2].min() == 0.0 and v[:, 2].max() == 5.0
    edges = np.sort(np.concatenate([s.mesh.triangles[2:][:, [i, (i + 1) % 3]] for i in range(3)]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)
    # outward normals
    centroid = v.reshape(-1, 3, 3).mean(axis=1) - np.array([3, 4, 2.5])
    assert np.all(np.einsum("ij,ij->i", s.mesh.normals[2:], centroid) > 0)


def test_box_below_ground_rejected():
    with pytest.raises(SceneError, match="below"):
        generate_test_scene({"boxes": [{"center": [0, 0, 0], "size": [1, 1, 2]}]})


def test_overlapping_boxes_allowed():
    s = generate_test_scene({"boxes": [{"center": [0, 0], "size": [2, 2, 2]}, {"center": [1, 0], "size": [2, 2, 3]}]})
    assert s.mesh.n_triangles == 26


def test_lowrise_preset_deterministic():
    heights = [b["size"][2] for b in PRESETS["low-rise"]["boxes"]]
    assert len(heights) == 5 and min(heights) == 3 and max(heights) == 10
    assert preset_scene("low-rise").content_hash() == preset_scene("low-rise").content_hash()
    assert preset_scene("low-rise").content_hash() != preset_scene("low-rise", 2.0).content_hash()


def test_zero_albedo_is_black():
    s = generate_test_scene({"ground": {"albedo": [0, 0, 0]}, "boxes": [{"center": [0, 0], "size": [4, 4, 4],
                                                                         "albedo": [0, 0, 0]}]})
    cam = nadir_camera(16, height=30.0)
    r = render_lambertian(s, cam, sun_state(GEO, MORNING), SKY)
    assert np.all(r.image.pixels == 0)


def test_shade_arithmetic():
    L = shade(np.full(3, 0.5), (1, 1, 1), 1.0, 0.7, (0.2, 0.2, 0.2), 2.0)
    np.testing.assert_allclose(L, 0.55, rtol=1e-15)


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 3.0), st.floats(0.0, 2.0), st.floats(1e-3, 1.0))
def test_more_sky_is_brighter(rho, s_sun, s_sky, phi, dphi):
    a = shade(np.full(3, rho), (1, 1, 1), 1.0, s_sun, np.full(3, phi), s_sky)
    b = shade(np.full(3, rho), (1, 1, 1), 1.0, s_sun, np.full(3, phi + dphi), s_sky)
    assert np.all(b > a)


def test_render_model_and_truth(lowrise):
    scene, acc, cam, sun, r = lowrise
    gb = r.gbuffer
    expected = shade(r.albedo, sun.psi, r.visibility, gb.s_sun, PHI, gb.s_sky)
    np.testing.assert_allclose(r.image.pixels, expected, rtol=1e-6)
    assert r.hit.all()
    assert np.all(r.albedo[r.hit] > 0) and set(np.unique(r.visibility)) == {0.0, 1.0}
    np.testing.assert_array_equal(r.visibility, gb.v_sun)


def test_increasing_phi_brightens_every_lit_pixel(lowrise):
    scene, acc, cam, sun, r = lowrise
    r2 = render_lambertian(scene, cam, sun, SKY.with_phi(PHI * 1.5), acc)
    lit = r.hit & (r.gbuffer.s_sky > 0)
    assert np.all(r2.image.pixels[lit] > r.image.pixels[lit])


def test_relight_with_original_sun_is_identity(lowrise):
    scene, acc, cam, sun, r = lowrise
    res = recover_albedo(r.image, r.gbuffer, PHI, sun.psi)
    out = relight(res.albedo, cam, acc, sun, SKY, gbuffer=r.gbuffer)
    v = res.valid
    rel = np.abs(out.pixels[v] - r.image.pixels[v]) / r.image.pixels[v]
    assert rel.max() < 1e-4


@pytest.mark.slow
def test_ambient_relight_removes_shadow_edges(lowrise_morning):
    fx = lowrise_morning
    r, gb = fx["render"], fx["render"].gbuffer
    amb = relight(r.albedo, fx["camera"], fx["accel"], fx["sun"], fx["sky"], ambient_only=True, gbuffer=gb)
    ground = gb.hit & (gb.triangle < 2)
    rho = np.where(ground, r.albedo.mean(-1), 1.0)
    shading0 = r.image.pixels.mean(-1) / rho
    shading1 = amb.pixels.mean(-1) / rho
    # open ground only: within 2 m of a wall the dome itself is occluded,
    # which is skylight shading rather than a cast-shadow edge
    open_ground = ground & (wall_distance(np.nan_to_num(gb.position), PRESETS["low-rise"]["boxes"]) > 2.0)
    a0 = gb.v_sun
    g0, g1 = [], []
    for s0, s1, m, a in ((shading0, shading1, open_ground, a0), (shading0.T, shading1.T, open_ground.T, a0.T)):
        pair = m[:, 1:] & m[:, :-1] & (a[:, 1:] != a[:, :-1])
        g0.append(np.abs(np.diff(s0, axis=1))[pair])
        g1.append(np.abs(np.diff(s1, axis=1))[pair])
    g0, g1 = np.concatenate(g0), np.concatenate(g1)
    assert len(g0) > 100
    assert g1.max() < 0.05 * g0.max()


def _shadow_offset(sun):
    scene = generate_test_scene({"boxes": [{"center": [0, 0], "size": [4, 4, 6]}]})
    acc = build_accel(scene.mesh)
    cam = nadir_camera(64, height=60.0, fx=64.0)
    img = relight(np.ones(cam.shape + (3,)), cam, acc, sun, SkyModel(n_samples=16))
    gb = trace_primary(cam, acc)
    shadow = gb.hit & (sun_visibility(gb, acc, sun.direction) == 0) & (gb.triangle < 2)
    assert shadow.any() and img.pixels.max() > 0
    return gb.position[shadow][:, :2].mean(axis=0)


@pytest.mark.parametrize("az", [60.0, 135.0, 250.0])
def test_mirrored_azimuth_flips_shadow_side(az):
    c1 = _shadow_offset(SunState.from_angles(az, 40.0))
    c2 = _shadow_offset(SunState.from_angles((az + 180.0) % 360.0, 40.0))
    sun_h = np.array([np.sin(np.deg2rad(az)), np.cos(np.deg2rad(az))])
    assert c1 @ sun_h < 0 < c2 @ sun_h


def test_disc_and_point_sun_agree_outside_penumbra(lowrise):
    scene, acc, cam, sun, r = lowrise
    disc = render_lambertian(preset_scene("low-rise", 2.0), cam, sun, SKY, acc)
    boundary = np.zeros(cam.shape, bool)
    a0 = r.visibility
    boundary[:, 1:] |= a0[:, 1:] != a0[:, :-1]
    boundary[:, :-1] |= a0[:, 1:] != a0[:, :-1]
    boundary[1:] |= a0[1:] != a0[:-1]
    boundary[:-1] |= a0[1:] != a0[:-1]
    far = ndimage.distance_transform_edt(~boundary) > 3
    np.testing.assert_allclose(disc.image.pixels[far], r.image.pixels[far], rtol=1e-6, atol=1e-12)
    frac = (disc.visibility > 0) & (disc.visibility < 1)
    assert frac.any() and not frac[far].any()

import numpy as np
import pytest
import yaml

from aeroalbedo.scene_io import (
    CameraView, GeoRef, ProjectConfig, RadianceImage, SceneError, TriangleMesh, load_mesh, load_project,
    parse_timestamp, read_mask_png, read_pfm, read_radiance_image, save_project, write_mesh, write_pfm,
    write_png8, write_radiance_image,
)

from conftest import fixture_camera


def test_single_triangle_obj(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.n_triangles == 1
    np.testing.assert_allclose(m.normals[0], [0, 0, 1])


def test_zero_area_triangle_dropped(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n")
    m = load_mesh(p)
    assert m.n_triangles == 1 and m.n_dropped == 1


def test_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n")
    assert load_mesh(p).n_triangles == 1


def test_quad_face_rejected(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(SceneError, match="non-triangular"):
        load_mesh(p)


def test_missing_and_empty_mesh(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mesh(tmp_path / "nope.obj")
    p = tmp_path / "e.obj"
    p.write_text("v 0 0 0\n")
    with pytest.raises(SceneError, match="empty"):
        load_mesh(p)


QUAD_V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64)
QUAD_F = np.array([[0, 1, 2], [0, 2, 3]])


def test_quad_ply_ascii(tmp_path):
    p = tmp_path / "q.ply"
    lines = ["ply", "format ascii 1.0", "element vertex 4", "property float x", "property float y",
             "property float z", "element face 2", "property list uchar int vertex_indices", "end_header"]
    lines += [" ".join(map(str, v)) for v in QUAD_V] + ["3 " + " ".join(map(str, f)) for f in QUAD_F]
    p.write_text("\n".join(lines) + "\n")
    m = load_mesh(p)
    assert m.n_vertices == 4 and m.n_triangles == 2
    np.testing.assert_allclose(m.normals, [[0, 0, 1], [0, 0, 1]])


def test_quad_ply_binary(tmp_path):
    p = tmp_path / "q.ply"
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\n"
              "property float y\nproperty float z\nelement face 2\n"
              "property list uchar int vertex_indices\nend_header\n").encode()
    faces = np.zeros(2, dtype=[("n", "u1"), ("i", "<i4", (3,))])
    faces["n"] = 3
    faces["i"] = QUAD_F
    p.write_bytes(header + QUAD_V.astype("<f4").tobytes() + faces.tobytes())
    m = load_mesh(p)
    np.testing.assert_array_equal(m.triangles, QUAD_F)
    np.testing.assert_allclose(m.normals, [[0, 0, 1], [0, 0, 1]])


def test_mesh_write_roundtrip(tmp_path):
    m = TriangleMesh(QUAD_V * np.pi, QUAD_F)
    write_mesh(m, tmp_path / "m.obj")
    back = load_mesh(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.vertices, m.vertices)
    assert back.content_hash() == m.content_hash()


def test_mesh_rejects_degenerate_direct():
    with pytest.raises(SceneError, match="degenerate"):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 2]])


def _project_doc(n_views=1, **extra):
    cam = fixture_camera(64)
    views = [dict(cam.to_record(), image=f"images/v{i}.pfm", name=f"v{i}") for i in range(n_views)]
    return {"mesh": "mesh.obj", "latitude": 40.0, "longitude": -83.0, "views": views, **extra}


def test_minimal_project_defaults(tmp_path):
    p = tmp_path / "project.yaml"
    p.write_text(yaml.safe_dump(_project_doc()))
    cfg = load_project(p)
    assert len(cfg.views) == 1
    assert cfg.sky_sigma == pytest.approx(np.deg2rad(45.0))
    assert cfg.hemi_samples == 1024
    assert cfg.exposure_scale == 1.0
    assert cfg.base_dir == tmp_path


def test_project_improper_rotation(tmp_path):
    doc = _project_doc()
    rot = np.asarray(doc["views"][0]["rotation"]).reshape(3, 3)
    rot[2] *= -1
    doc["views"][0]["rotation"] = rot.ravel().tolist()
    p = tmp_path / "project.yaml"
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(SceneError, match="improper rotation"):
        load_project(p)


def test_project_nonorthonormal_and_bad_timestamp(tmp_path):
    doc = _project_doc()
    doc["views"][0]["rotation"] = [1, 0, 0, 0, 1, 0, 0, 0, 1.01]
    p = tmp_path / "project.yaml"
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(SceneError, match="not orthonormal"):
        load_project(p)
    doc = _project_doc()
    doc["views"][0]["timestamp"] = "yesterday"
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(SceneError, match="timestamp"):
        load_project(p)


def test_project_schema_violation(tmp_path):
    p = tmp_path / "project.yaml"
    p.write_text(yaml.safe_dump(_project_doc(colour="blue")))
    with pytest.raises(SceneError, match="unknown"):
        load_project(p)
    doc = _project_doc()
    del doc["mesh"]
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(SceneError, match="mesh"):
        load_project(p)


def test_thirty_views_in_order(tmp_path):
    p = tmp_path / "project.yaml"
    p.write_text(yaml.safe_dump(_project_doc(30)))
    cfg = load_project(p)
    assert [v.name for v in cfg.views] == [f"v{i}" for i in range(30)]
    assert cfg.view("v7") is cfg.views[7] and cfg.view(3) is cfg.views[3]


def test_project_save_load_roundtrip(tmp_path):
    cfg = ProjectConfig(mesh="mesh.obj", georef=GeoRef(12.5, 100.25), views=[fixture_camera(64)],
                        hemi_samples=64, seed=7, refine={"lam": 0.01})
    save_project(cfg, tmp_path / "p.yaml")
    back = load_project(tmp_path / "p.yaml")
    assert back.hemi_samples == 64 and back.seed == 7 and back.refine == {"lam": 0.01}
    np.testing.assert_allclose(back.views[0].rotation, cfg.views[0].rotation, atol=1e-15)
    assert back.views[0].timestamp == cfg.views[0].timestamp


def test_timestamp_parsing():
    a = parse_timestamp("2023-06-21T14:00:00Z")
    b = parse_timestamp("2023-06-21T10:00:00-04:00")
    assert a == b and a.utcoffset().total_seconds() == 0
    assert parse_timestamp("2023-06-21T14:00:00") == a


def test_georef_bounds():
    with pytest.raises(SceneError):
        GeoRef(91.0, 0.0)
    with pytest.raises(SceneError):
        GeoRef(0.0, 181.0)


def test_camera_project_unproject():
    cam = fixture_camera(64)
    depth = np.full(cam.shape, 50.0)
    pts = cam.unproject(depth)
    u, v, z = cam.project(pts)
    uu, vv = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5)
    np.testing.assert_allclose(u, uu, atol=1e-9)
    np.testing.assert_allclose(v, vv, atol=1e-9)
    np.testing.assert_allclose(z, 50.0)


def test_constant_pfm_passthrough(tmp_path):
    write_pfm(tmp_path / "c.pfm", np.full((4, 5, 3), 0.25))
    img = read_radiance_image(tmp_path / "c.pfm")
    assert img.shape == (4, 5)
    assert np.all(img.pixels == 0.25)


def test_pfm_roundtrip_bit_exact(tmp_path, rng):
    img = RadianceImage(rng.random((3, 3, 3)))
    write_radiance_image(img, tmp_path / "r.pfm")
    np.testing.assert_array_equal(read_radiance_image(tmp_path / "r.pfm").pixels, img.pixels)
    grey = rng.random((5, 7)).astype(np.float32)
    write_pfm(tmp_path / "g.pfm", grey)
    np.testing.assert_array_equal(read_pfm(tmp_path / "g.pfm"), grey)


def test_big_endian_pfm(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n3 2\n1.0\n" + np.flipud(data).astype(">f4").tobytes())
    np.testing.assert_array_equal(read_pfm(p), data)


def test_png_srgb_decode(tmp_path):
    px = np.zeros((1, 2, 3), np.float64)
    px[0, 0] = 1.0
    px[0, 1] = 128 / 255
    write_png8(tmp_path / "p.png", px)
    img = read_radiance_image(tmp_path / "p.png", transfer="srgb")
    assert img.pixels[0, 0, 0] == 1.0
    # direct evaluation of (128/255)**2.2; 0.2158 would be code value 127
    assert img.pixels[0, 1, 0] == pytest.approx(0.219520, abs=1e-6)
    with pytest.raises(SceneError, match="srgb"):
        read_radiance_image(tmp_path / "p.png")


def test_invalid_pixels_rejected():
    with pytest.raises(SceneError, match="NaN"):
        RadianceImage(np.full((2, 2, 3), np.nan))
    with pytest.raises(SceneError, match="negative"):
        RadianceImage(-np.ones((2, 2, 3)))


def test_unsupported_format(tmp_path):
    p = tmp_path / "x.bmp"
    p.write_bytes(b"BM")
    with pytest.raises(SceneError, match="unsupported"):
        read_radiance_image(p)


def test_mask_png_roundtrip(tmp_path, rng):
    m = rng.random((9, 11)) > 0.5
    write_png8(tmp_path / "m.png", m)
    np.testing.assert_array_equal(read_mask_png(tmp_path / "m.png"), m)

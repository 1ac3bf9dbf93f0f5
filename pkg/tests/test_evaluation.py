import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from aeroalbedo.evaluation import (
    EvaluationError, change_detect, disc, iou, lmse, lmse_reference, smse, temporal_consistency, warp_to_view,
)
from aeroalbedo.gbuffer import trace_primary
from aeroalbedo.render import generate_test_scene
from aeroalbedo.scene_io import CameraView
from aeroalbedo.tracing import build_accel

from conftest import nadir_camera, plane_mesh

# ---------------------------------------------------------------------------
# SMSE / LMSE
# ---------------------------------------------------------------------------


def test_smse_identity_and_scale(rng):
    x = rng.random((16, 16, 3))
    assert smse(x, x) == 0
    assert smse(7 * x, x) == pytest.approx(0, abs=1e-30)


def test_smse_closed_form():
    assert smse(np.array([[2.0, 2.0]]), np.array([[1.0, 2.0]])) == pytest.approx(0.25, rel=1e-15)


def test_smse_zero_estimate():
    t = np.array([[1.0, 3.0]])
    assert smse(np.zeros_like(t), t) == pytest.approx(5.0)


def test_smse_mask(rng):
    e, t = rng.random((8, 8)), rng.random((8, 8))
    m = np.zeros((8, 8), bool)
    m[2:5, 1:6] = True
    assert smse(e, t, m) == pytest.approx(smse(e[2:5, 1:6], t[2:5, 1:6]), rel=1e-14)
    with pytest.raises(EvaluationError, match="empty"):
        smse(e, t, np.zeros((8, 8), bool))
    with pytest.raises(EvaluationError):
        smse(e, t[:4])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 5, 3), elements=st.floats(0.01, 10)), st.sampled_from([0.1, 1.0, 7.0, 0.37, 2 ** 10]))
def test_smse_scale_invariance(x, c):
    assert smse(c * x, x) <= 1e-24 * float(np.mean(x ** 2))
    assert smse(x, x) == 0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-5, 5)), arrays(np.float64, (5, 5), elements=st.floats(-5, 5)))
def test_smse_non_negative(a, b):
    assert smse(a, b) >= 0


def test_lmse_identity(rng):
    x = rng.random((64, 64, 3))
    assert lmse(x, x) == 0


def test_lmse_locality():
    # windows of 20 at stride 10 on a 40x40 image sit on a 10 px grid; a
    # checkerboard of per-block scales is invisible to any window that
    # stays inside one block, so use window=10 stride=10 blocks.
    rng = np.random.default_rng(3)
    t = rng.uniform(0.1, 1.0, (40, 40))
    blocks = np.kron((np.indices((4, 4)).sum(axis=0) % 2) * 1.5 + 0.5, np.ones((10, 10)))
    e = blocks * t
    assert lmse(e, t, window=10, stride=10) == pytest.approx(0, abs=1e-28)
    assert smse(e, t) > 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_lmse_matches_reference(seed):
    rng = np.random.default_rng(seed)
    e, t = rng.random((64, 64, 3)), rng.random((64, 64, 3))
    mask = rng.random((64, 64)) > 0.2
    assert lmse(e, t) == pytest.approx(lmse_reference(e, t), abs=1e-10)
    assert lmse(e, t, mask) == pytest.approx(lmse_reference(e, t, mask), abs=1e-10)


def test_lmse_errors(rng):
    x = rng.random((10, 10))
    with pytest.raises(EvaluationError, match="window"):
        lmse(x, x)
    with pytest.raises(EvaluationError, match="usable"):
        lmse(rng.random((30, 30)), rng.random((30, 30)), np.zeros((30, 30), bool))


# ---------------------------------------------------------------------------
# temporal consistency
# ---------------------------------------------------------------------------


def test_consistency_identical_stack(rng):
    x = rng.random((10, 10, 3))
    s = temporal_consistency([x, x, x])
    assert s.p25 == s.median == s.p75 == s.max == s.std == 0


def test_consistency_constant_offset(rng):
    x = rng.uniform(0.2, 0.6, (10, 10))
    s = temporal_consistency([x, x + 10 / 255])
    assert s.median == pytest.approx(5.0, rel=1e-9)
    assert s.max == pytest.approx(5.0, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
def test_consistency_ordering(n, seed):
    rng = np.random.default_rng(seed)
    s = temporal_consistency([rng.random((6, 6, 3)) for _ in range(n)])
    assert 0 <= s.p25 <= s.median <= s.p75 <= s.max and s.std >= 0


def test_consistency_normalize_removes_exposure(rng):
    x = rng.uniform(0.1, 1.0, (8, 8, 3))
    assert temporal_consistency([x, 3 * x], normalize=True).max == pytest.approx(0, abs=1e-12)


def test_consistency_errors(rng):
    with pytest.raises(EvaluationError):
        temporal_consistency([rng.random((4, 4))])
    with pytest.raises(EvaluationError, match="misaligned"):
        temporal_consistency([rng.random((4, 4)), rng.random((4, 5))])


# ---------------------------------------------------------------------------
# warping
# ---------------------------------------------------------------------------


def _depth(cam, acc):
    return trace_primary(cam, acc).depth


def test_warp_identity(rng):
    acc = build_accel(plane_mesh())
    cam = CameraView.look_at((3, -20, 30), (0, 0, 0), 40, 30, 35.0)
    d = _depth(cam, acc)
    src = rng.random((30, 40, 3))
    out, valid = warp_to_view(src, cam, d, cam, d)
    assert valid.all()
    np.testing.assert_allclose(out, src, atol=1e-12)


def test_warp_roll_90(rng):
    acc = build_accel(plane_mesh())
    src_cam = nadir_camera(32, height=20.0)
    roll = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    tgt_cam = dataclasses.replace(src_cam, rotation=roll @ src_cam.rotation)
    src = rng.random((32, 32, 3))
    out, valid = warp_to_view(src, src_cam, _depth(src_cam, acc), tgt_cam, _depth(tgt_cam, acc))
    # target (r, c) sees what the source shows at (c, W-1-r)
    assert valid.all()
    np.testing.assert_allclose(out, np.rot90(src), atol=1e-9)


def test_warp_occlusion_masked():
    scene = generate_test_scene({"boxes": [{"center": [0, 0], "size": [4, 4, 10]}]})
    acc = build_accel(scene.mesh)
    src_cam = CameraView.look_at((-30, 0, 15), (0, 0, 0), 64, 64, 50.0)
    tgt_cam = CameraView.look_at((30, 0, 15), (0, 0, 0), 64, 64, 50.0)
    src_gb, tgt_gb = trace_primary(src_cam, acc), trace_primary(tgt_cam, acc)
    src = np.ones((64, 64))
    out, valid = warp_to_view(src, src_cam, src_gb.depth, tgt_cam, tgt_gb.depth)
    # oracle: shoot a ray from each target surface point toward the source center
    hit = tgt_gb.hit
    p = tgt_gb.position[hit]
    to_src = src_cam.center - p     # unnormalized: t = 1 reaches the source center
    hidden = acc.occluded(p + 1e-5 * to_src, to_src, 0.999)
    u, v, _ = src_cam.project(p)
    inside = (u >= 0) & (u < 64) & (v >= 0) & (v < 64)
    assert hidden.sum() > 100
    # ground behind the box is masked; allow disagreement only along silhouettes
    agree = valid[hit] == (~hidden & inside)
    assert agree.mean() > 0.97
    assert not valid[hit][hidden & inside].mean() > 0.02
    assert np.all(out[~valid] == 0)


# ---------------------------------------------------------------------------
# change detection
# ---------------------------------------------------------------------------


def test_change_identical_and_small(rng):
    x = rng.random((32, 32, 3))
    assert change_detect(x, x).count == 0
    assert change_detect(x, x + 0.09 * rng.uniform(-1, 1, x.shape), tau=0.1).count == 0


def planted(seed=0, tau=0.1, n_salt=150, margin=0):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0.2, 0.6, (96, 96, 3))
    src = ref.copy()
    truth = np.zeros((96, 96), bool)
    truth[30:50, 40:60] = True
    src[truth] += 3 * tau
    flips = rng.integers(0, 96, (n_salt, 2))
    if margin:
        far = ndimage.distance_transform_edt(~truth)[flips[:, 0], flips[:, 1]] > margin
        flips = flips[far]
        n_salt = len(flips)
    src[flips[:, 0], flips[:, 1]] += rng.choice([-1, 1], n_salt)[:, None] * 3 * tau
    return ref, src, truth


@pytest.mark.parametrize("seed", range(3))
def test_change_planted_blob(seed):
    ref, src, truth = planted(seed)
    m = change_detect(ref, src, tau=0.1, radius=2).mask.astype(bool)
    assert iou(m, truth) >= 0.7
    lab, n = ndimage.label(m)
    sizes = ndimage.sum(m, lab, range(1, n + 1))
    assert sizes.min() > 1
    assert not m[~ndimage.binary_dilation(truth, iterations=3)].any()


@pytest.mark.parametrize("seed", range(3))
def test_change_order_invariant_without_thin_structures(seed):
    # salt kept clear of the blob, so nothing is thinner than the disc
    ref, src, truth = planted(seed, margin=5)
    oc = change_detect(ref, src, order="open-close").mask
    co = change_detect(ref, src, order="close-open").mask
    np.testing.assert_array_equal(oc, co)
    with pytest.raises(ValueError):
        change_detect(ref, src, order="sideways")


def test_change_valid_mask_excludes(rng):
    ref, src, truth = planted()
    valid = np.ones(truth.shape, bool)
    valid[:, :50] = False
    m = change_detect(ref, src, valid=valid).mask
    assert not m[:, :50].any() and m.dtype == np.uint8


def test_disc_and_iou():
    assert disc(0).sum() == 1 and disc(1).sum() == 5 and disc(2).sum() == 13
    a = np.zeros((4, 4), bool)
    a[:2] = True
    b = np.zeros((4, 4), bool)
    b[1:3] = True
    assert iou(a, b) == pytest.approx(4 / 12)
    assert iou(np.zeros(3), np.zeros(3)) == 1.0

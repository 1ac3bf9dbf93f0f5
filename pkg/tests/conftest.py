import numpy as np
import pytest

from aeroalbedo.scene_io import CameraView, GeoRef, TriangleMesh


PHI = np.array([0.22, 0.28, 0.38])
GEO = GeoRef(40.0, -83.0)
MORNING = "2023-06-21T14:00:00Z"
EVENING = "2023-06-21T22:00:00Z"
RENDER_SEED = 12345


def fixture_camera(size=256, fx=420.0, timestamp=MORNING, name="morning"):
    return CameraView.look_at((10, -50, 120), (0, 0, 0), size, size, fx * size / 256,
                              timestamp=timestamp, name=name)


def nadir_camera(size=32, height=10.0, fx=None, timestamp=MORNING):
    return CameraView.look_at((0, 0, height), (0, 0, 0), size, size, fx or size, up=(0, 1, 0),
                              timestamp=timestamp)


def plane_mesh(half=1000.0, z=0.0):
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def random_triangles(rng, n, spread=10.0, size=1.0):
    centers = rng.uniform(-spread, spread, (n, 1, 3))
    v = (centers + rng.normal(scale=size, size=(n, 3, 3))).reshape(-1, 3)
    return TriangleMesh.from_arrays(v, np.arange(3 * n).reshape(n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(20231015)


# ---------------------------------------------------------------------------
# 256 x 256 "low-rise" renders shared by the slow tests
# ---------------------------------------------------------------------------


def _render_fixture(preset, timestamp, radius=0.0):
    from aeroalbedo.ephemeris import sun_state
    from aeroalbedo.gbuffer import SkyModel
    from aeroalbedo.render import preset_scene, render_lambertian
    from aeroalbedo.tracing import build_accel

    scene = preset_scene(preset, radius)
    acc = build_accel(scene.mesh)
    cam = fixture_camera(timestamp=timestamp)
    sun = sun_state(GEO, timestamp)
    sky = SkyModel(PHI, seed=RENDER_SEED)
    return {"scene": scene, "accel": acc, "camera": cam, "sun": sun, "sky": sky,
            "render": render_lambertian(scene, cam, sun, sky, acc)}


@pytest.fixture(scope="session")
def lowrise_morning():
    return _render_fixture("low-rise", MORNING)


@pytest.fixture(scope="session")
def lowrise_disc():
    return _render_fixture("low-rise", MORNING, radius=2.0)


def wall_distance(position, boxes):
    """Horizontal distance (m) from each point to the nearest box footprint."""
    d = np.full(position.shape[:-1], np.inf)
    for b in boxes:
        cx, cy = b["center"][:2]
        sx, sy = b["size"][:2]
        dx = np.maximum(np.abs(position[..., 0] - cx) - sx / 2, 0)
        dy = np.maximum(np.abs(position[..., 1] - cy) - sy / 2, 0)
        d = np.minimum(d, np.hypot(dx, dy))
    return d


# ---------------------------------------------------------------------------
# acceptance report
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    """Store a criterion outcome for the summary and echo it immediately."""
    line = f"C{number:<2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[k])

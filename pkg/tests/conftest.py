import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qcmap.mesh_core import TriMesh
from qcmap.meshgen import grid_square, unit_disk

settings.register_profile(
    "qcmap",
    max_examples=30,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("qcmap")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def disk():
    return unit_disk(6)


@pytest.fixture
def jittered_disk():
    return unit_disk(6, seed=7, jitter=0.3)


@pytest.fixture
def square():
    return grid_square(4)


@pytest.fixture
def equilateral():
    return TriMesh([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]], [[0, 1, 2]])


def off_text(vertices, faces) -> str:
    lines = ["OFF", f"{len(vertices)} {len(faces)} 0"]
    lines += [" ".join(repr(float(c)) for c in (*v, 0.0)[:3]) for v in vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in faces]
    return "\n".join(lines) + "\n"


@pytest.fixture
def write_off(tmp_path):
    def _write(name, vertices, faces):
        path = tmp_path / name
        path.write_text(off_text(vertices, faces), encoding="utf-8")
        return path

    return _write

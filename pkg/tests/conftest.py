import numpy as np
import pytest

from roomtone.scene import SceneObject, SourceSpec, box_mesh, quad_mesh, shoebox_scene


@pytest.fixture
def shoebox():
    return shoebox_scene((5.0, 4.0, 3.0), 0.2, 0.5)


def panel(oid, x, material=0, occluder=True, dynamic=False, size=(2.0, 2.0), lo=(0.0, 0.0)):
    """Square panel in the plane x = const spanning y, z from ``lo``."""
    mesh = quad_mesh(f"panel{oid}", (x, lo[0], lo[1]), (0.0, size[0], 0.0), (0.0, 0.0, size[1]),
                     material)
    return SceneObject(oid, mesh, dynamic=dynamic, occluder=occluder)


def pink(n, seed=0, peak=0.5):
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    x -= x.mean()
    return x * (peak / np.max(np.abs(x)))

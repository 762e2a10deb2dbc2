import numpy as np
import pytest
import scipy.spatial

from penflow import assembly, fem, mesh


def jittered_mesh(seed: int, n: int = 5, lo: float = 0.0, hi: float = 1.0):
    """Random but well-shaped triangulation: jittered grid + Delaunay."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    h = (hi - lo) / (n - 1)
    interior = ((pts[:, 0] > lo) & (pts[:, 0] < hi)
                & (pts[:, 1] > lo) & (pts[:, 1] < hi))
    pts[interior] += rng.uniform(-0.25 * h, 0.25 * h, size=(interior.sum(), 2))
    tri = scipy.spatial.Delaunay(pts)
    return mesh.TriMesh.from_arrays(pts, tri.simplices)


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture(scope="session")
def unit8():
    return mesh.unit_square_mesh(8)


@pytest.fixture(scope="session")
def unit8_cache(unit8):
    return assembly.build_cache(unit8)


@pytest.fixture(scope="session")
def unit8_layout(unit8_cache):
    return unit8_cache.layout


@pytest.fixture
def random_meshes():
    """Twenty random well-shaped meshes (session-stable seeds)."""
    return [jittered_mesh(seed) for seed in range(20)]

import numpy as np
import pytest
from scipy.spatial import Delaunay

from tetfield.geometry import build_mesh
from tetfield.model import ImpostorModel
from tetfield.scenes import cube_star_mesh, unit_tet


def delaunay_mesh(n_tets_target, seed):
    """Random Delaunay tetrahedralization with roughly the requested size."""
    rng = np.random.default_rng(seed)
    n_pts = max(8, n_tets_target // 5 + 4)
    while True:
        pts = rng.random((n_pts, 3))
        tri = Delaunay(pts)
        simp = tri.simplices
        p = pts[simp]
        vol = np.abs(np.linalg.det(p[:, 1:] - p[:, :1])) / 6
        keep = simp[vol > 1e-7]
        if len(keep) >= n_tets_target:
            return build_mesh(pts, keep[:n_tets_target] if len(keep) > n_tets_target * 2 else keep)
        n_pts += 2


def sign_test_locate(vertices, tets, p, tol=1e-12):
    """Independent oracle: first tet (by index) whose four face-orientation
    determinants all agree with the tet's own orientation."""
    for k, t in enumerate(tets):
        a, b, c, d = vertices[t]
        full = np.linalg.det(np.array([b - a, c - a, d - a]))
        dets = [
            np.linalg.det(np.array([b - p, c - p, d - p])),
            np.linalg.det(np.array([p - a, c - a, d - a])),
            np.linalg.det(np.array([b - a, p - a, d - a])),
            np.linalg.det(np.array([b - a, c - a, p - a])),
        ]
        if all(x / full >= -tol for x in dets):
            return k
    return -1


@pytest.fixture
def tet1():
    return unit_tet()


@pytest.fixture
def star():
    return cube_star_mesh(1.0)


@pytest.fixture
def small_model():
    """Float64 model with features large enough to matter in renders."""
    m = ImpostorModel.create(cube_star_mesh(1.0), log2_size=12, levels=3, features=2, sh_degree=2,
                             max_res=6, seed=3, dtype=np.float64)
    rng = np.random.default_rng(5)
    m.table.data[:] = rng.normal(0, 0.5, m.table.data.shape)
    return m


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

from pathlib import Path

import numpy as np
import pytest

from helpers import constant_model, toy_run, zero_density
from tetfield.model import ImpostorModel, load_model, save_model
from tetfield.rendering import Image, RenderOptions
from tetfield.scenes import (cube_star_mesh, fluff_ball, homogeneous_sphere, orbit_cameras,
                             oracle_render, oracle_render_rays, subdivide_tet)
from tetfield.training import (Adam, RayDataset, RetrainRegion, Stage1Config, Stage2Config,
                               TrainConfig, TrainingDiverged, batch_loss_and_grads,
                               initial_loss, retrain_local, sample_simplex, stage1_loss,
                               stage1_points, train, transfer_unchanged)

GOLDEN = Path(__file__).parent / "golden"


def small_views(n=2, size=6, colour=1.0):
    cams = orbit_cameras(n, distance=3.0, size=size)
    return [(c, Image(np.full((size, size, 3), colour))) for c in cams]


# -- optimizer ---------------------------------------------------------------


def test_adam_matches_hand_computation():
    p = np.array([1.0, -2.0])
    opt = Adam([p], [0.1], betas=(0.9, 0.99), eps=1e-15)
    g1, g2 = np.array([0.5, -1.0]), np.array([0.2, 0.4])
    opt.step([g1])
    # first step moves every coordinate by exactly lr * sign(g)
    np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-12)
    opt.step([g2])
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.99 * 0.01 * g1**2 + 0.01 * g2**2
    want = np.array([0.9, -1.9]) - 0.1 * (m / (1 - 0.81)) / np.sqrt(v / (1 - 0.99**2))
    np.testing.assert_allclose(p, want, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_table=0)
    with pytest.raises(ValueError):
        RayDataset.from_views([])


# -- training loop -----------------------------------------------------------


def test_white_images_zero_density_step0_loss():
    model = zero_density(constant_model(cube_star_mesh(0.5), 1.0, (0.5, 0.5, 0.5)))
    bg = (0.25, 0.5, 0.0)
    views = small_views()
    _, losses = train(model, views, TrainConfig(batch_size=16, steps=1), RenderOptions(background=bg))
    want = np.mean((np.array(bg) - 1.0) ** 2)
    assert losses[0] == want
    assert initial_loss(model, views, RenderOptions(background=bg)) == pytest.approx(want, abs=1e-15)


def _tiny_train(path, seed, threads=1):
    mesh = cube_star_mesh(0.6)
    model = ImpostorModel.create(mesh, log2_size=10, levels=2, features=2, sh_degree=1,
                                 max_res=4, seed=seed)
    views = [(c, Image(np.full((8, 8, 3), 0.3))) for c in orbit_cameras(2, size=8)]
    train(model, views, TrainConfig(batch_size=32, steps=5, seed=seed, threads=threads))
    save_model(path, model)
    return path.read_bytes()


def test_checkpoints_bit_identical(tmp_path):
    ck = tmp_path / "m.nimp"
    assert _tiny_train(ck, 0) == _tiny_train(ck, 0)
    assert _tiny_train(ck, 0) != _tiny_train(ck, 1)
    assert _tiny_train(ck, 2, threads=3) == _tiny_train(ck, 2, threads=3)


def test_threaded_gradients_match_serial(small_model):
    rng = np.random.default_rng(0)
    cam = orbit_cameras(1, size=10)[0]
    data = RayDataset.from_views([(cam, Image(rng.random((10, 10, 3))))])
    opts = RenderOptions()
    s = data.prepare(small_model, opts)
    small_model.table.zero_grad()
    l1, d1, r1 = batch_loss_and_grads(small_model, s, data.dirs, data.targets, opts, 1)
    g1 = small_model.table.grad.copy()
    small_model.table.zero_grad()
    l3, d3, r3 = batch_loss_and_grads(small_model, s, data.dirs, data.targets, opts, 3)
    assert l1 == pytest.approx(l3, rel=1e-12)
    np.testing.assert_allclose(small_model.table.grad, g1, atol=1e-13)
    for a, b in zip(d1 + r1, d3 + r3):
        np.testing.assert_allclose(a, b, atol=1e-13)


def test_nan_loss_aborts():
    model = constant_model(cube_star_mesh(0.5), 1.0, (0.5, 0.5, 0.5))
    cam = orbit_cameras(1, size=4)[0]
    with pytest.raises(TrainingDiverged):
        train(model, [(cam, Image(np.full((4, 4, 3), np.nan)))], TrainConfig(batch_size=16, steps=3))


# -- oracle renderer ---------------------------------------------------------


def test_oracle_zero_density_is_background():
    scene = homogeneous_sphere(sigma=0.0)
    out = oracle_render_rays(scene, [[-3, 0, 0]], [[1, 0, 0]], background=(0.1, 0.2, 0.3))
    np.testing.assert_array_equal(out, [[0.1, 0.2, 0.3]])


def test_oracle_sphere_centre_ray():
    r, s, c = 0.5, 4.0, np.array([0.8, 0.3, 0.1])
    scene = homogeneous_sphere(r, s, c)
    out = oracle_render_rays(scene, [[-3, 0, 0]], [[1, 0, 0]])[0]
    T = np.exp(-2 * r * s)
    np.testing.assert_allclose(out, c * (1 - T) + T, atol=1e-4)


def test_oracle_step_halving_converged():
    scene = fluff_ball()
    cam = orbit_cameras(1, size=24)[0]
    a = oracle_render(scene, cam, 512).rgb
    b = oracle_render(scene, cam, 1024).rgb
    assert np.abs(a - b).max() < 1e-4
    with pytest.raises(ValueError):
        oracle_render(scene, cam, 256)


def test_oracle_rotation_symmetry():
    scene = homogeneous_sphere()
    imgs = [oracle_render(scene, c).rgb
            for c in orbit_cameras(4, size=24, elevation_deg=0.0, alternate=False)]
    for im in imgs[1:]:
        assert np.abs(im - imgs[0]).max() < 1e-4


# -- toy scene ---------------------------------------------------------------


@pytest.mark.slow
def test_toy_training_curve():
    run = toy_run()
    losses = run.losses
    smooth = np.convolve(losses, np.ones(100) / 100, mode="valid")
    # monotone after smoothing, allowing noise of one part in a thousand
    worst_rise = np.max(smooth[1:] - smooth[:-1])
    assert worst_rise <= 1e-3 * smooth[0]
    assert losses[0] / smooth[-1] >= 10.0
    assert run.curve[-1][1] >= 30.0


# -- local retraining --------------------------------------------------------


def golden_model():
    return load_model(GOLDEN / "toy.nimp")


def test_region_validation():
    m = golden_model()
    with pytest.raises(ValueError):
        RetrainRegion([], np.arange(m.mesh.n_tets)).validate(m.mesh, m.mesh)
    with pytest.raises(ValueError):
        RetrainRegion([0], np.full(m.mesh.n_tets, -1)).validate(m.mesh, m.mesh)
    with pytest.raises(ValueError):
        RetrainRegion([0], np.arange(3)).validate(m.mesh, m.mesh)


def test_region_match_after_subdivision():
    mesh = cube_star_mesh(1.0)
    new, _, _ = subdivide_tet(mesh, 5)
    region = RetrainRegion.match(mesh, new)
    assert len(region.changed) == new.n_tets - (mesh.n_tets - 1)
    unchanged = np.setdiff1d(np.arange(new.n_tets), region.changed)
    assert 5 not in region.old_of_new[unchanged]
    region.validate(mesh, new)


def test_identity_transfer_has_zero_feature_loss():
    old = golden_model()
    # same mesh, every tet mapped to itself: features are copied verbatim
    region = RetrainRegion([3], np.arange(old.mesh.n_tets))
    hist = {}
    new = retrain_local(old, old.mesh, region, Stage1Config(steps=1, points_per_step=4096),
                        Stage2Config(steps=0), history=hist)
    assert hist["stage1"][0] == 0.0
    np.testing.assert_array_equal(new.table.data, old.table.data)


def test_transfer_copies_unchanged_slices_only():
    old = golden_model()
    new_mesh, _, _ = subdivide_tet(old.mesh, 2)
    region = RetrainRegion.match(old.mesh, new_mesh)
    new = transfer_unchanged(old, new_mesh, region, seed=4)
    s = new.layout.slice_size
    for t_new in range(new_mesh.n_tets):
        block = new.table.data[t_new * s:(t_new + 1) * s]
        t_old = region.old_of_new[t_new]
        if t_old >= 0:
            np.testing.assert_array_equal(block, old.table.data[t_old * s:(t_old + 1) * s])
        else:
            assert np.abs(block - old.table.data[2 * s:3 * s]).max() > 0


def test_stage1_loss_ignores_new_vertex_positions():
    old = golden_model()
    new_mesh, _, _ = subdivide_tet(old.mesh, 2)
    region = RetrainRegion.match(old.mesh, new_mesh)
    new = transfer_unchanged(old, new_mesh, region, seed=4)
    pts = stage1_points(old, new, region.changed, np.random.default_rng(0), 2048)
    moved = new.with_mesh(new_mesh.with_vertices(new_mesh.vertices * 1.1 + 0.05))
    assert stage1_loss(old, new, *pts) == stage1_loss(old, moved, *pts)


def test_simplex_sampling_uniform():
    b = sample_simplex(np.random.default_rng(0), 200_000)
    np.testing.assert_allclose(b.sum(1), 1.0, atol=1e-12)
    assert b.min() >= 0
    # each coordinate of a uniform 3-simplex point is Beta(1, 3): mean 1/4, var 3/80
    np.testing.assert_allclose(b.mean(0), 0.25, atol=3e-3)
    np.testing.assert_allclose(b.var(0), 3 / 80, atol=1e-3)

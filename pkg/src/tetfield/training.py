"""Fitting models to posed images and two-stage local retraining after a
re-mesh."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoding import FeatureTable, encode_positions, encode_positions_backward
from .geometry import TetMesh, locate_points, points_from_barycentric
from .model import ImpostorModel
from .rendering import Camera, Image, RenderOptions, RenderPass, render_rays
from .sampling import SampleBatch, sample_rays

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised when the loss becomes NaN or infinite."""


@dataclass
class TrainConfig:
    batch_size: int = 1024
    steps: int = 5000
    lr_table: float = 1e-2
    lr_decoder: float = 1e-3
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-15
    seed: int = 0
    threads: int = 1
    log_every: int = 0

    def __post_init__(self):
        if self.batch_size <= 0 or self.steps < 0 or self.lr_table <= 0 or self.lr_decoder <= 0:
            raise ValueError("batch size and learning rates must be positive, steps >= 0")


class Adam:
    """Adaptive-moment updates for a fixed list of arrays (updated in place)."""

    def __init__(self, params, lrs, betas=(0.9, 0.99), eps=1e-15):
        self.params = params
        self.lrs = list(lrs)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, self.lrs):
            if g is None:
                continue
            g = g.astype(p.dtype, copy=False)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class RayDataset:
    """All pixels of posed images as rays, with samples cached for one mesh."""

    origins: np.ndarray
    dirs: np.ndarray
    targets: np.ndarray
    samples: SampleBatch | None = field(default=None, repr=False)

    @classmethod
    def from_views(cls, views) -> "RayDataset":
        if not views:
            raise ValueError("dataset must contain at least one view")
        o, d, c = [], [], []
        for cam, img in views:
            ro, rd = cam.rays()
            if img.rgb.shape != (cam.height, cam.width, 3):
                raise ValueError("image size does not match its camera")
            o.append(ro)
            d.append(rd)
            c.append(img.rgb.reshape(-1, 3))
        return cls(np.concatenate(o), np.concatenate(d), np.concatenate(c))

    def __len__(self) -> int:
        return len(self.origins)

    def prepare(self, model: ImpostorModel, opts: RenderOptions) -> SampleBatch:
        _, self.samples = sample_rays(model.mesh, self.origins, self.dirs, opts.sampler)
        return self.samples


def _model_grads(model: ImpostorModel, d_grads, r_grads):
    return [model.table.grad, *d_grads, *r_grads]


def batch_loss_and_grads(model: ImpostorModel, samples: SampleBatch, dirs, targets,
                         opts: RenderOptions, threads: int = 1):
    """MSE over a ray batch; gradients land in ``model.table.grad`` and are
    returned for the decoders.  With ``threads > 1`` the rays are split into
    contiguous chunks and partial gradients are summed in chunk order."""
    n = samples.n_rays
    denom = 3.0 * n
    if threads <= 1:
        rp = RenderPass(model, samples, dirs, opts)
        rgb = rp.forward()
        diff = rgb - targets
        d_grads, r_grads = rp.backward(2.0 * diff / denom)
        return float(np.mean(diff**2)), d_grads, r_grads

    bounds = np.linspace(0, n, threads + 1).astype(int)

    def work(k):
        rays = np.arange(bounds[k], bounds[k + 1])
        sub = samples.select_rays(rays)
        shadow = ImpostorModel(model.mesh, FeatureTable(model.layout, model.table.data,
                                                        dtype=model.dtype),
                               model.decoders, model.sh_degree)
        shadow.table.data = model.table.data  # share storage, private grad
        rp = RenderPass(shadow, sub, dirs[rays], opts)
        diff = rp.forward() - targets[rays]
        d_grads, r_grads = rp.backward(2.0 * diff / denom)
        return float((diff**2).sum()), shadow.table.grad, d_grads, r_grads

    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(work, range(threads)))
    sq = 0.0
    d_acc = [np.zeros_like(p) for p in model.decoders.density.params]
    r_acc = [np.zeros_like(p) for p in model.decoders.radiance.params]
    for s, tg, dg, rg in parts:
        sq += s
        model.table.grad += tg
        for a, g in zip(d_acc, dg):
            a += g
        for a, g in zip(r_acc, rg):
            a += g
    return sq / denom, d_acc, r_acc


def train(model: ImpostorModel, views, cfg: TrainConfig, opts: RenderOptions | None = None,
          dataset: RayDataset | None = None, callback=None):
    """Fit ``model`` in place to ``(camera, image)`` views; returns ``(model, losses)``.
    A truthy return from ``callback(step, loss)`` stops early."""
    opts = opts or RenderOptions()
    data = dataset or RayDataset.from_views(views)
    samples = data.samples if data.samples is not None else data.prepare(model, opts)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    lrs = [cfg.lr_table] + [cfg.lr_decoder] * (len(params) - 1)
    opt = Adam(params, lrs, cfg.betas, cfg.eps)
    losses = []
    for step in range(cfg.steps):
        rays = np.sort(rng.choice(len(data), size=min(cfg.batch_size, len(data)), replace=False))
        sub = samples.select_rays(rays)
        model.table.zero_grad()
        loss, d_grads, r_grads = batch_loss_and_grads(model, sub, data.dirs[rays],
                                                      data.targets[rays], opts, cfg.threads)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss is {loss} at step {step}")
        losses.append(loss)
        opt.step(_model_grads(model, d_grads, r_grads))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.6g", step, loss)
        if callback is not None and callback(step, loss):
            break
    return model, np.asarray(losses)


def initial_loss(model: ImpostorModel, views, opts: RenderOptions) -> float:
    data = RayDataset.from_views(views)
    rgb = render_rays(model, data.origins, data.dirs, opts)
    return float(np.mean((rgb - data.targets) ** 2))


def evaluate_psnr(model: ImpostorModel, views, opts: RenderOptions) -> float:
    from .rendering import psnr, render_image

    vals = [psnr(render_image(model, cam, opts), img) for cam, img in views]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# local retraining


@dataclass
class RetrainRegion:
    changed: np.ndarray  # new-mesh tet ids to retrain
    old_of_new: np.ndarray  # old tet id per new tet, -1 where changed

    def __post_init__(self):
        self.changed = np.asarray(self.changed, dtype=np.int64)
        self.old_of_new = np.asarray(self.old_of_new, dtype=np.int64)

    def validate(self, old: TetMesh, new: TetMesh) -> None:
        if len(self.old_of_new) != new.n_tets:
            raise ValueError("old_of_new must have one entry per new tet")
        if len(self.changed) == 0:
            raise ValueError("retrain region is empty")
        unchanged = np.setdiff1d(np.arange(new.n_tets), self.changed)
        bad = unchanged[(self.old_of_new[unchanged] < 0) | (self.old_of_new[unchanged] >= old.n_tets)]
        if len(bad):
            raise ValueError(f"unchanged tets without an old counterpart: {bad.tolist()}")

    @classmethod
    def match(cls, old: TetMesh, new: TetMesh, tol: float = 1e-9) -> "RetrainRegion":
        """Tets of ``new`` whose vertex positions equal an old tet's are unchanged."""
        def keys(mesh):
            pts = np.round(mesh.vertices[mesh.tets] / tol).astype(np.int64)
            return [tuple(sorted(map(tuple, p))) for p in pts]

        lookup = {k: i for i, k in enumerate(keys(old))}
        old_of_new = np.array([lookup.get(k, -1) for k in keys(new)], dtype=np.int64)
        return cls(np.flatnonzero(old_of_new < 0), old_of_new)


@dataclass
class Stage1Config:
    steps: int = 500
    points_per_step: int = 1 << 14
    lr: float = 1e-2
    seed: int = 0


@dataclass
class Stage2Config:
    steps: int = 300
    batch_size: int = 512
    lr_table: float = 1e-2
    lr_decoder: float = 1e-4
    seed: int = 1


def transfer_unchanged(old: ImpostorModel, new_mesh: TetMesh, region: RetrainRegion,
                       seed: int = 0) -> ImpostorModel:
    """New model on ``new_mesh``: unchanged tets copy their old slices verbatim,
    changed tets start from fresh random features, decoders are warm-started."""
    layout = old.layout.with_tet_count(new_mesh.n_tets)
    table = FeatureTable(layout, dtype=old.dtype, seed=seed)
    s = layout.slice_size
    keep = np.flatnonzero(region.old_of_new >= 0)
    if len(keep):
        rows_new = (keep[:, None] * s + np.arange(s)).reshape(-1)
        rows_old = (region.old_of_new[keep][:, None] * s + np.arange(s)).reshape(-1)
        table.data[rows_new] = old.table.data[rows_old]
    return ImpostorModel(new_mesh, table, old.decoders.copy(), old.sh_degree)


def sample_simplex(rng, n: int) -> np.ndarray:
    """Uniform barycentric points: gaps between sorted uniforms."""
    u = np.sort(rng.random((n, 3)), axis=1)
    return np.diff(np.concatenate([np.zeros((n, 1)), u, np.ones((n, 1))], axis=1), axis=1)


def stage1_points(old: ImpostorModel, new: ImpostorModel, tets: np.ndarray, rng, n: int):
    """Points in the given new tets that also lie inside the old proxy."""
    t_new = tets[rng.integers(0, len(tets), n)]
    b_new = sample_simplex(rng, n)
    world = points_from_barycentric(new.mesh, t_new, b_new)
    t_old, b_old = locate_points(old.mesh, world)
    keep = t_old >= 0
    return t_new[keep], b_new[keep], t_old[keep], b_old[keep]


def stage1_loss(old: ImpostorModel, new: ImpostorModel, t_new, b_new, t_old, b_old,
                backward: bool = False) -> float:
    """Mean L1 distance between old and new position features at shared points."""
    target = encode_positions(old.table, t_old, b_old).astype(np.float64)
    pred = encode_positions(new.table, t_new, b_new).astype(np.float64)
    diff = pred - target
    if backward:
        encode_positions_backward(new.table, t_new, b_new, np.sign(diff) / diff.size)
    return float(np.abs(diff).mean()) if diff.size else 0.0


def _region_rays(mesh: TetMesh, tets: np.ndarray, rng, n: int):
    t = tets[rng.integers(0, len(tets), n)]
    q = points_from_barycentric(mesh, t, sample_simplex(rng, n))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    lo, hi = mesh.bounds()
    reach = 2.0 * np.linalg.norm(hi - lo) + 1.0
    return q - reach * d, d


def retrain_local(old: ImpostorModel, new_mesh: TetMesh, region: RetrainRegion,
                  stage1: Stage1Config | None = None, stage2: Stage2Config | None = None,
                  opts: RenderOptions | None = None, history: dict | None = None) -> ImpostorModel:
    """Transfer ``old`` onto ``new_mesh``: feature matching, then render matching."""
    stage1 = stage1 or Stage1Config()
    stage2 = stage2 or Stage2Config()
    opts = opts or RenderOptions()
    region.validate(old.mesh, new_mesh)
    new = transfer_unchanged(old, new_mesh, region, seed=stage1.seed)
    hist = history if history is not None else {}
    hist.setdefault("stage1", [])
    hist.setdefault("stage2", [])

    rng = np.random.default_rng(stage1.seed)
    opt = Adam([new.table.data], [stage1.lr])
    for _ in range(stage1.steps):
        pts = stage1_points(old, new, region.changed, rng, stage1.points_per_step)
        new.table.zero_grad()
        loss = stage1_loss(old, new, *pts, backward=True)
        if not np.isfinite(loss):
            raise TrainingDiverged("stage 1 loss is not finite")
        hist["stage1"].append(loss)
        opt.step([new.table.grad])

    if stage2.steps:
        rng = np.random.default_rng(stage2.seed)
        params = new.parameters()
        opt = Adam(params, [stage2.lr_table] + [stage2.lr_decoder] * (len(params) - 1))
        frozen = np.ones(new.layout.rows, dtype=bool)
        s = new.layout.slice_size
        frozen[(region.changed[:, None] * s + np.arange(s)).reshape(-1)] = False
        for _ in range(stage2.steps):
            o, d = _region_rays(new_mesh, region.changed, rng, stage2.batch_size)
            target = render_rays(old, o, d, opts)
            _, samples = sample_rays(new.mesh, o, d, opts.sampler)
            new.table.zero_grad()
            rp = RenderPass(new, samples, d, opts)
            diff = rp.forward() - target
            loss = float(np.mean(diff**2))
            if not np.isfinite(loss):
                raise TrainingDiverged("stage 2 loss is not finite")
            hist["stage2"].append(loss)
            d_grads, r_grads = rp.backward(2.0 * diff / diff.size)
            new.table.grad[frozen] = 0
            opt.step(_model_grads(new, d_grads, r_grads))
    return new


def region_pixel_mask(mesh: TetMesh, tets, camera: Camera) -> np.ndarray:
    """Pixels whose ray crosses any of ``tets``."""
    from .geometry import intersect_rays

    o, d = camera.rays()
    segs = intersect_rays(mesh, o, d)
    hit = np.zeros(len(o), dtype=bool)
    hit[segs.ray[np.isin(segs.tet, tets)]] = True
    return hit.reshape(camera.height, camera.width)


def region_psnr(reference: ImpostorModel, candidate: ImpostorModel, tets, cameras,
                opts: RenderOptions) -> float:
    """PSNR of ``candidate`` against ``reference`` over region pixels of all views."""
    from .rendering import psnr, render_image

    a, b, masks = [], [], []
    for cam in cameras:
        a.append(render_image(reference, cam, opts).rgb)
        b.append(render_image(candidate, cam, opts).rgb)
        masks.append(region_pixel_mask(candidate.mesh, tets, cam))
    return psnr(Image(np.concatenate(a)), Image(np.concatenate(b)), np.concatenate(masks))

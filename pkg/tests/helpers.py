"""Model builders and gradient probes shared by several test files."""

import dataclasses
import functools
import time
import types

import numpy as np

from tetfield.model import ImpostorModel
from tetfield.rendering import RenderOptions, RenderPass
from tetfield.sampling import sample_rays


def constant_model(mesh, sigma=1.0, color=(0.8, 0.3, 0.1), sh_degree=1, dtype=np.float64):
    """Zero weights everywhere; biases pin density and colour to constants."""
    m = ImpostorModel.create(mesh, log2_size=8, levels=2, features=2, sh_degree=sh_degree,
                             max_res=4, dtype=dtype)
    for net in (m.decoders.density, m.decoders.radiance):
        for p in net.params:
            p[...] = 0
    m.decoders.density.params[-1][...] = np.log(sigma) if sigma > 0 else -1e4
    c = np.asarray(color, float)
    with np.errstate(divide="ignore"):  # 0 and 1 map to -inf and inf
        m.decoders.radiance.params[-1][...] = np.log(c / (1 - c))
    return m


def zero_density(model):
    for p in model.decoders.density.params:
        p[...] = 0
    model.decoders.density.params[-1][...] = -1e4
    return model


def loss_and_grads(model, o, d, target, opts):
    _, s = sample_rays(model.mesh, o, d, opts.sampler)
    model.table.zero_grad()
    rp = RenderPass(model, s, d, opts)
    diff = rp.forward() - target
    dg, rg = rp.backward(2 * diff / diff.size)
    return float(np.mean(diff**2)), model.table.grad.copy(), dg, rg


def fd_probe(model, o, d, target, opts, n_table=20, n_dec=20, seed=0, h=1e-6):
    """Worst relative error of analytic vs central-difference gradients."""
    rng = np.random.default_rng(seed)
    _, g_table, dg, rg = loss_and_grads(model, o, d, target, opts)

    def loss():
        _, s = sample_rays(model.mesh, o, d, opts.sampler)
        return float(np.mean((RenderPass(model, s, d, opts).forward() - target) ** 2))

    probes = []
    flat = np.abs(g_table).ravel()
    cand = np.flatnonzero(flat > 1e-3 * flat.max())
    for k in rng.choice(cand, size=min(n_table, len(cand)), replace=False):
        probes.append((model.table.data, np.unravel_index(k, g_table.shape), g_table.ravel()[k]))
    dec = list(zip(model.decoders.density.params + model.decoders.radiance.params, dg + rg))
    for _ in range(n_dec):
        for _ in range(1000):
            p, g = dec[rng.integers(0, len(dec))]
            idx = tuple(int(rng.integers(0, s)) for s in p.shape)
            if abs(g[idx]) > 1e-4 * max(np.abs(g).max(), 1e-12):
                break
        probes.append((p, idx, g[idx]))
    worst = 0.0
    for arr, idx, g in probes:
        keep = arr[idx]
        arr[idx] = keep + h
        plus = loss()
        arr[idx] = keep - h
        minus = loss()
        arr[idx] = keep
        fd = (plus - minus) / (2 * h)
        worst = max(worst, abs(fd - g) / max(abs(g), 1e-300))
    return worst, len(probes)


@functools.lru_cache(maxsize=None)
def toy_run(gate=30.0, check_every=250, max_steps=5000, max_seconds=600.0):
    """Train the toy scene until held-out PSNR reaches ``gate`` (shared by
    several test files; runs once per session)."""
    from tetfield.scenes import TOY_MODEL, TOY_RENDER_MODE, TOY_TRAIN, toy_dataset
    from tetfield.training import evaluate_psnr, train

    scene, views, test = toy_dataset()
    model = ImpostorModel.from_config(scene.mesh, TOY_MODEL, seed=0)
    opts = RenderOptions(TOY_RENDER_MODE)
    cfg = dataclasses.replace(TOY_TRAIN, steps=max_steps)
    curve = []
    start = time.perf_counter()

    def check(step, loss):
        if (step + 1) % check_every:
            return False
        curve.append((step + 1, evaluate_psnr(model, test, opts)))
        return curve[-1][1] >= gate or time.perf_counter() - start > max_seconds

    _, losses = train(model, views, cfg, opts, callback=check)
    return types.SimpleNamespace(scene=scene, views=views, test=test, model=model, opts=opts,
                                 losses=losses, curve=curve,
                                 seconds=time.perf_counter() - start)


def blend_scenario(fur):
    """Fur density from ``fur`` outside a sphere stamp; a flat blue pattern
    model fills the stamp where the fur is dense."""
    from tetfield.editing import DensityLeaf, SphereLeaf

    pattern = constant_model(fur.mesh, 6.0, (0.15, 0.25, 0.9), dtype=fur.dtype)
    stamp = SphereLeaf((0.0, 0.25, 0.0), 0.35)
    region = stamp & DensityLeaf(fur, 0.5)
    return pattern, DensityLeaf(fur) - region, region


ACCEPTANCE: list[str] = []


def report(n, ok, detail):
    """Record and print one acceptance line."""
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok

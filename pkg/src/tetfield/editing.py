"""Edits on trained models: proxy deformation, boolean fields, selective
blending and multi-instance composition, plus the line-oriented edit-script
format used by the command line.

Boolean fields are evaluated per render sample.  A sample is identified by
the rendering model, its tet and its barycentrics; world positions (needed
by analytic pattern leaves and by density leaves of *other* models) are
derived lazily.
"""

from __future__ import annotations

import logging
import shlex
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .decoders import density_forward, radiance_forward
from .encoding import encode_positions, sh_basis
from .geometry import (MeshError, load_frames, locate_points, points_from_barycentric,
                       signed_volumes)
from .model import ImpostorModel, load_model
from .rendering import Camera, Image, RenderOptions, RenderPass
from .sampling import sample_rays

log = logging.getLogger(__name__)

DEFAULT_EPS = 0.01
NEAR_DEGENERATE = 1e-3  # volume ratio (deformed / rest) that triggers a warning


# ---------------------------------------------------------------------------
# deformation


def deform(model: ImpostorModel, new_vertices) -> ImpostorModel:
    """Move the proxy vertices; the hash table and decoders are shared untouched."""
    v = np.asarray(new_vertices, dtype=np.float64)
    if v.size != model.mesh.vertices.size:
        raise MeshError(f"expected {model.mesh.n_vertices} vertices, got {v.size // 3}")
    mesh = model.mesh.with_vertices(v)  # raises on inverted tets
    ratio = signed_volumes(mesh.vertices, mesh.tets) / model.mesh.volumes()
    thin = np.flatnonzero(ratio < NEAR_DEGENERATE)
    if len(thin):
        log.warning("near-degenerate tets after deformation: %s", thin.tolist())
    return model.with_mesh(mesh)


def interpolate_vertices(rest, target, frames: int) -> list[np.ndarray]:
    """``frames`` vertex sets linearly spaced from ``rest`` to ``target`` inclusive."""
    rest, target = np.asarray(rest, float), np.asarray(target, float)
    return [rest + (target - rest) * s for s in np.linspace(0.0, 1.0, frames)]


# ---------------------------------------------------------------------------
# boolean fields


class SampleContext:
    """The samples a field is evaluated on."""

    def __init__(self, model: ImpostorModel, tet, bary, points=None):
        self.model = model
        self.tet = np.asarray(tet, dtype=np.int64)
        self.bary = np.asarray(bary, dtype=np.float64).reshape(-1, 4)
        self._points = None if points is None else np.asarray(points, float).reshape(-1, 3)

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            self._points = points_from_barycentric(self.model.mesh, self.tet, self.bary)
        return self._points

    def __len__(self) -> int:
        return len(self.tet)


def combine_values(op: str, a, b) -> np.ndarray:
    """Binary algebra on {0, 1} arrays."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if op == "union":
        out = a + b - a * b
    elif op == "intersection":
        out = a * b
    elif op == "difference":
        out = a - a * b
    elif op == "xor":
        out = (a + b) % 2
    else:
        raise ValueError(f"unknown boolean op {op!r}")
    return out.astype(np.uint8)


OPS = ("union", "intersection", "difference", "xor")
OP_ALIASES = {"union": "union", "or": "union", "add": "union",
              "intersection": "intersection", "and": "intersection", "intersect": "intersection",
              "difference": "difference", "diff": "difference", "sub": "difference",
              "xor": "xor"}


class BooleanField:
    """Expression tree of {0, 1} predicates over render samples."""

    def evaluate(self, ctx: SampleContext) -> np.ndarray:
        raise NotImplementedError

    def models(self) -> list[ImpostorModel]:
        return []

    def __or__(self, other):
        return Combine("union", self, other)

    def __and__(self, other):
        return Combine("intersection", self, other)

    def __sub__(self, other):
        return Combine("difference", self, other)

    def __xor__(self, other):
        return Combine("xor", self, other)

    def __invert__(self):
        return Complement(self)


@dataclass(frozen=True, eq=False)
class Constant(BooleanField):
    value: int

    def evaluate(self, ctx):
        return np.full(len(ctx), 1 if self.value else 0, dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class DensityLeaf(BooleanField):
    """``1`` where the model's decoded density exceeds ``eps``.

    When evaluated on samples of another model the world points are located
    in this model's proxy; points outside it are ``0``.
    """

    model: ImpostorModel
    eps: float = DEFAULT_EPS

    def evaluate(self, ctx):
        if ctx.model is self.model:
            tet, bary = ctx.tet, ctx.bary
            inside = np.ones(len(ctx), dtype=bool)
        else:
            tet, bary = locate_points(self.model.mesh, ctx.points)
            inside = tet >= 0
        out = np.zeros(len(ctx), dtype=np.uint8)
        if inside.any():
            out[inside] = boolean_status(self.model, tet[inside], bary[inside], self.eps)
        return out

    def models(self):
        return [self.model]


@dataclass(frozen=True, eq=False)
class SphereLeaf(BooleanField):
    center: tuple
    radius: float

    def evaluate(self, ctx):
        d = np.linalg.norm(ctx.points - np.asarray(self.center, float), axis=1) - self.radius
        return (d <= 0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class BoxLeaf(BooleanField):
    lo: tuple
    hi: tuple

    def evaluate(self, ctx):
        p = ctx.points
        q = np.maximum(np.asarray(self.lo, float) - p, p - np.asarray(self.hi, float))
        return (q.max(axis=1) <= 0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ImageMaskLeaf(BooleanField):
    """A binary image stamped through the volume along one world axis.

    ``mask[i, j]`` covers the rectangle ``lo..hi`` of the two remaining axes
    (row index along the second, column along the first); points whose
    projection falls outside the rectangle are ``0``.
    """

    mask: np.ndarray
    axis: int
    lo: tuple
    hi: tuple

    def evaluate(self, ctx):
        m = np.asarray(self.mask, dtype=bool)
        keep = [a for a in range(3) if a != self.axis]
        uv = (ctx.points[:, keep] - np.asarray(self.lo, float)) / (
            np.asarray(self.hi, float) - np.asarray(self.lo, float))
        inside = np.all((uv >= 0) & (uv < 1), axis=1)
        col = np.clip((uv[:, 0] * m.shape[1]).astype(np.int64), 0, m.shape[1] - 1)
        row = np.clip((uv[:, 1] * m.shape[0]).astype(np.int64), 0, m.shape[0] - 1)
        return (inside & m[row, col]).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Combine(BooleanField):
    op: str
    a: BooleanField
    b: BooleanField

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown boolean op {self.op!r}")

    def evaluate(self, ctx):
        return combine_values(self.op, self.a.evaluate(ctx), self.b.evaluate(ctx))

    def models(self):
        return self.a.models() + self.b.models()


@dataclass(frozen=True, eq=False)
class Complement(BooleanField):
    a: BooleanField

    def evaluate(self, ctx):
        return (1 - self.a.evaluate(ctx)).astype(np.uint8)

    def models(self):
        return self.a.models()


def boolean_status(model: ImpostorModel, tet, bary, eps: float = DEFAULT_EPS):
    """``1`` where decoded density exceeds ``eps``; scalar in, scalar out."""
    scalar = np.ndim(tet) == 0
    t = np.atleast_1d(np.asarray(tet, dtype=np.int64))
    b = np.asarray(bary, dtype=np.float64).reshape(-1, 4)
    sigma, _ = density_forward(model.decoders, encode_positions(model.table, t, b))
    out = (sigma.astype(np.float64) > eps).astype(np.uint8)
    return int(out[0]) if scalar else out


def boolean_combine(a: BooleanField, b: BooleanField, op: str) -> BooleanField:
    return Combine(OP_ALIASES.get(op, op), a, b)


def field_mask_fn(fld: BooleanField):
    """Adapter to the ``mask_fn(model, samples)`` hook of the renderer."""

    def mask_fn(model, samples):
        return fld.evaluate(SampleContext(model, samples.tet, samples.bary)).astype(np.float64)

    return mask_fn


# ---------------------------------------------------------------------------
# masked rendering and blending


def _masked_pass(model: ImpostorModel, fld: Optional[BooleanField], origins, dirs,
                 opts: RenderOptions, chunk: int = 8192):
    """Foreground colour (no background) and final transmittance per ray."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    black = RenderOptions(opts.mode, opts.sampler, (0.0, 0.0, 0.0))
    fg = np.empty((len(o), 3))
    trans = np.empty(len(o))
    for a in range(0, len(o), chunk):
        b = min(a + chunk, len(o))
        _, samples = sample_rays(model.mesh, o[a:b], d[a:b], opts.sampler)
        mask = None if fld is None else fld.evaluate(
            SampleContext(model, samples.tet, samples.bary)).astype(np.float64)
        rp = RenderPass(model, samples, d[a:b], black, mask)
        fg[a:b] = rp.forward()
        trans[a:b] = rp.T_final
    return fg, trans


def render_with_boolean(model: ImpostorModel, fld: BooleanField, origins, dirs,
                        opts: RenderOptions) -> np.ndarray:
    """Early-integration render with each sample's density scaled by the field."""
    opts = RenderOptions("early_integration", opts.sampler, opts.background)
    fg, trans = _masked_pass(model, fld, origins, dirs, opts)
    return fg + trans[:, None] * np.asarray(opts.background)


def blend_fields(model_i: ImpostorModel, model_j: ImpostorModel, field_i: BooleanField,
                 field_j: BooleanField, origins, dirs, opts: RenderOptions) -> np.ndarray:
    """Sum of two masked early-integration renders.

    Each term keeps its own transmittance chain; the background is added once,
    weighted by the product of both final transmittances, so that an empty
    second mask reproduces the first masked render exactly.
    """
    opts = RenderOptions("early_integration", opts.sampler, opts.background)
    fi, ti = _masked_pass(model_i, field_i, origins, dirs, opts)
    fj, tj = _masked_pass(model_j, field_j, origins, dirs, opts)
    return fi + fj + (ti * tj)[:, None] * np.asarray(opts.background)


def _image(camera: Camera, rgb) -> Image:
    return Image(np.clip(rgb, 0.0, 1.0).reshape(camera.height, camera.width, 3))


def render_boolean_image(model, fld, camera: Camera, opts: RenderOptions) -> Image:
    o, d = camera.rays()
    return _image(camera, render_with_boolean(model, fld, o, d, opts))


def blend_image(model_i, model_j, field_i, field_j, camera: Camera, opts: RenderOptions) -> Image:
    o, d = camera.rays()
    return _image(camera, blend_fields(model_i, model_j, field_i, field_j, o, d, opts))


# ---------------------------------------------------------------------------
# composition


@dataclass
class Instance:
    model: ImpostorModel
    transform: np.ndarray = field(default_factory=lambda: np.eye(4))  # local -> world
    mask: Optional[BooleanField] = None

    def __post_init__(self):
        self.transform = np.asarray(self.transform, dtype=np.float64)
        if self.transform.shape != (4, 4):
            raise ValueError("instance transform must be 4x4")
        if abs(np.linalg.det(self.transform[:3, :3])) < 1e-12:
            raise ValueError("instance transform is not invertible")


@dataclass
class CompositeScene:
    instances: list

    def __post_init__(self):
        if not self.instances:
            raise ValueError("a composite scene needs at least one instance")


def translation(offset) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = offset
    return m


def compose_rays(scene: CompositeScene, origins, dirs, opts: RenderOptions) -> np.ndarray:
    """Decode every instance's samples, merge them by world ray parameter and
    composite them with one transmittance chain."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    R = len(o)
    rays, ts, taus, cols = [], [], [], []
    for inst in scene.instances:
        inv = np.linalg.inv(inst.transform)
        lo = o @ inv[:3, :3].T + inv[:3, 3]
        ld = d @ inv[:3, :3].T
        scale = np.linalg.norm(ld, axis=1)
        ld = ld / scale[:, None]
        _, s = sample_rays(inst.model.mesh, lo, ld, opts.sampler)
        if len(s) == 0:
            continue
        m = inst.model
        f = encode_positions(m.table, s.tet, s.bary)
        sigma, _ = density_forward(m.decoders, f)
        sig = sigma.astype(np.float64)
        if inst.mask is not None:
            sig = sig * inst.mask.evaluate(SampleContext(m, s.tet, s.bary))
        dir_feat = sh_basis(ld, m.sh_degree)[s.ray].astype(f.dtype)
        c, _ = radiance_forward(m.decoders, np.concatenate([f, dir_feat], axis=1))
        rays.append(s.ray)
        ts.append(s.t / scale[s.ray])
        taus.append(sig * s.delta)
        cols.append(c.astype(np.float64))
    bg = np.asarray(opts.background, dtype=np.float64)
    if not rays:
        return np.broadcast_to(bg, (R, 3)).copy()
    ray = np.concatenate(rays)
    t = np.concatenate(ts)
    order = np.lexsort((t, ray))
    ray, tau, col = ray[order], np.concatenate(taus)[order], np.concatenate(cols)[order]
    incl = np.cumsum(tau)
    starts = np.searchsorted(ray, np.arange(R))
    first = np.r_[0.0, incl][starts]  # optical depth before each ray's first sample
    before = incl - tau - first[ray]
    w = np.exp(-before) * -np.expm1(-tau)
    total = np.bincount(ray, weights=tau, minlength=R)
    rgb = np.stack([np.bincount(ray, weights=w * col[:, k], minlength=R) for k in range(3)], axis=1)
    return rgb + np.exp(-total)[:, None] * bg


def compose(scene: CompositeScene, camera: Camera, opts: RenderOptions) -> Image:
    o, d = camera.rays()
    return _image(camera, compose_rays(scene, o, d, opts))


# ---------------------------------------------------------------------------
# edit scripts and field descriptions


class ScriptError(ValueError):
    pass


def parse_leaf(tokens: Sequence[str], model: Optional[ImpostorModel] = None,
               eps: float = DEFAULT_EPS) -> BooleanField:
    """``sphere cx cy cz r`` | ``box x0 y0 z0 x1 y1 z1`` | ``density [eps]`` | ``all`` | ``none``."""
    if not tokens:
        raise ScriptError("missing field leaf")
    kind, args = tokens[0], tokens[1:]
    try:
        nums = [float(x) for x in args]
    except ValueError:
        raise ScriptError(f"non-numeric argument in {' '.join(tokens)!r}") from None
    if kind == "sphere" and len(nums) == 4:
        return SphereLeaf(tuple(nums[:3]), nums[3])
    if kind == "box" and len(nums) == 6:
        return BoxLeaf(tuple(nums[:3]), tuple(nums[3:]))
    if kind == "density" and len(nums) <= 1:
        if model is None:
            raise ScriptError("density leaf needs a model")
        return DensityLeaf(model, nums[0] if nums else eps)
    if kind in ("all", "none") and not nums:
        return Constant(1 if kind == "all" else 0)
    raise ScriptError(f"bad field leaf {' '.join(tokens)!r}")


def parse_field(lines: Sequence[str], model: Optional[ImpostorModel] = None,
                eps: float = DEFAULT_EPS) -> BooleanField:
    """A field description: the first line is a leaf; each later line is
    ``<op> <leaf>`` applied to the running field, or ``not``."""
    fld: Optional[BooleanField] = None
    for raw in lines:
        tokens = shlex.split(raw, comments=True)
        if not tokens:
            continue
        if fld is None:
            fld = parse_leaf(tokens, model, eps)
        elif tokens == ["not"]:
            fld = Complement(fld)
        elif tokens[0] in OP_ALIASES:
            fld = Combine(OP_ALIASES[tokens[0]], fld, parse_leaf(tokens[1:], model, eps))
        else:
            raise ScriptError(f"bad field line {raw.strip()!r}")
    if fld is None:
        raise ScriptError("empty field description")
    return fld


def load_field(path, model: Optional[ImpostorModel] = None, eps: float = DEFAULT_EPS) -> BooleanField:
    with open(path) as fh:
        return parse_field(fh.read().splitlines(), model, eps)


@dataclass
class EditState:
    """The result of an edit script: a model, its boolean field and an
    optional blend partner with its own field."""

    model: ImpostorModel
    field: Optional[BooleanField] = None
    partner: Optional[ImpostorModel] = None
    partner_field: Optional[BooleanField] = None

    def render(self, camera: Camera, opts: RenderOptions) -> Image:
        from .rendering import render_image

        if self.partner is not None:
            own = self.field if self.field is not None else Constant(1)
            return blend_image(self.model, self.partner, own, self.partner_field, camera, opts)
        if self.field is not None:
            return render_boolean_image(self.model, self.field, camera, opts)
        return render_image(self.model, camera, opts)


def run_script(model: ImpostorModel, lines: Sequence[str], base_dir=".",
               eps: float = DEFAULT_EPS) -> EditState:
    """Apply ``deform <frames> [index]``, ``bool <op> <leaf...>`` and
    ``blend <model> <mask file>`` lines in order.  Relative paths resolve
    against ``base_dir``."""
    import os

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    state = EditState(model)
    for n, raw in enumerate(lines, 1):
        tokens = shlex.split(raw, comments=True)
        if not tokens:
            continue
        cmd, args = tokens[0], tokens[1:]
        try:
            if cmd == "deform" and len(args) in (1, 2):
                frames = load_frames(resolve(args[0]))
                k = int(args[1]) if len(args) == 2 else len(frames) - 1
                state.model = deform(state.model, frames[k])
            elif cmd == "bool" and len(args) >= 2:
                if args[0] not in OP_ALIASES:
                    raise ScriptError(f"unknown boolean op {args[0]!r}")
                base = state.field if state.field is not None else DensityLeaf(state.model, eps)
                state.field = Combine(OP_ALIASES[args[0]], base, parse_leaf(args[1:], state.model, eps))
            elif cmd == "blend" and len(args) == 2:
                partner = load_model(resolve(args[0]), dtype=state.model.dtype)
                region = load_field(resolve(args[1]), partner, eps)
                own = state.field if state.field is not None else Constant(1)
                state.field = Combine("difference", own, region)
                state.partner = partner
                state.partner_field = region
            else:
                raise ScriptError(f"unknown or malformed command {raw.strip()!r}")
        except (ScriptError, IndexError, ValueError) as exc:
            raise ScriptError(f"line {n}: {exc}") from None
    return state


def load_script(path, model: ImpostorModel, eps: float = DEFAULT_EPS) -> EditState:
    import os

    with open(path) as fh:
        return run_script(model, fh.read().splitlines(), os.path.dirname(os.path.abspath(path)), eps)

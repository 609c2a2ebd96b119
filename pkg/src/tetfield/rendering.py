"""Volume rendering over tet crossings in the barycentric Manhattan measure.

Two modes share one sampler and transmittance chain:

``decode_first``
    every sample is decoded to (sigma, rgb) and alpha-composited.
``early_integration``
    position features are composited with the same weights, normalized by
    the ray opacity, decoded once per ray, and the decoded colour is scaled
    by that opacity over the background.

:class:`RenderPass` keeps the forward intermediates needed to push
gradients back into the hash table and both decoders.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoders import density_forward, radiance_forward, sigmoid
from .encoding import encode_positions, encode_positions_backward, sh_basis
from .geometry import Ray, TetSegment
from .model import ImpostorModel
from .sampling import SampleBatch, SamplerParams, sample_rays

MODES = ("decode_first", "early_integration")


@dataclass(frozen=True)
class RenderOptions:
    mode: str = "decode_first"
    sampler: SamplerParams = field(default_factory=SamplerParams)
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"render mode must be one of {MODES}")
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))

    @classmethod
    def on_white(cls, **kw) -> "RenderOptions":
        return cls(background=(1.0, 1.0, 1.0), **kw)

    @classmethod
    def on_black(cls, **kw) -> "RenderOptions":
        return cls(background=(0.0, 0.0, 0.0), **kw)


@dataclass
class Camera:
    """Pinhole camera.  ``rotation`` is camera-to-world with columns
    (right, up, back); the camera looks down its local -z axis."""

    position: np.ndarray
    rotation: np.ndarray
    focal: float
    width: int
    height: int
    principal: tuple | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation must be orthonormal")
        if self.width <= 0 or self.height <= 0 or self.focal <= 0:
            raise ValueError("camera size and focal length must be positive")
        if self.principal is None:
            self.principal = (self.width / 2.0, self.height / 2.0)

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height) -> "Camera":
        eye = np.asarray(eye, float)
        back = eye - np.asarray(target, float)
        back /= np.linalg.norm(back)
        right = np.cross(up, back)
        right /= np.linalg.norm(right)
        true_up = np.cross(back, right)
        return cls(eye, np.stack([right, true_up, back], axis=1), focal, width, height)

    def rays(self):
        """Origins and unit directions through pixel centres, row-major."""
        cx, cy = self.principal
        j, i = np.meshgrid(np.arange(self.width), np.arange(self.height))
        local = np.stack([(j + 0.5 - cx) / self.focal, -(i + 0.5 - cy) / self.focal,
                          -np.ones_like(j, dtype=float)], axis=-1).reshape(-1, 3)
        d = local @ self.rotation.T
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.broadcast_to(self.position, d.shape).copy(), d


@dataclass
class Image:
    rgb: np.ndarray  # (height, width, 3)

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or 0 in self.rgb.shape:
            raise ValueError("image must be a non-empty (height, width, 3) array")

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


def segment_integration_measure(seg: TetSegment, a0: float, a1: float) -> float:
    if not 0.0 <= a0 < a1 <= 1.0:
        raise ValueError("need 0 <= a0 < a1 <= 1")
    return (a1 - a0) * float(np.abs(np.asarray(seg.bary_in) - np.asarray(seg.bary_out)).sum())


def _pad(values, ray, slot, shape):
    out = np.zeros(shape + values.shape[1:], dtype=np.float64)
    out[ray, slot] = values
    return out


class RenderPass:
    """One differentiable render of a batch of pre-sampled rays."""

    def __init__(self, model: ImpostorModel, samples: SampleBatch, view_dirs, opts: RenderOptions,
                 mask=None):
        self.model = model
        self.s = samples
        self.opts = opts
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)
        self.dir_feat = sh_basis(view_dirs, model.sh_degree) if samples.n_rays else np.zeros((0, model.sh_degree**2))
        self.bg = np.asarray(opts.background, dtype=np.float64)

    def forward(self) -> np.ndarray:
        m, s = self.model, self.s
        R = s.n_rays
        self.f = encode_positions(m.table, s.tet, s.bary)
        sigma, self.d_acts = density_forward(m.decoders, self.f)
        self.sigma = sigma
        sig = sigma.astype(np.float64)
        if self.mask is not None:
            sig = sig * self.mask
        tau = sig * s.delta
        self.slot = s.slot()
        S = max(int(s.counts.max()) if R else 0, 1)
        self.shape = (R, S)
        incl = np.cumsum(_pad(tau, s.ray, self.slot, self.shape), axis=1)
        excl = incl[s.ray, self.slot] - tau
        self.T = np.exp(-excl)
        self.T_next = np.exp(-incl[s.ray, self.slot])
        self.w = self.T * -np.expm1(-tau)
        total = incl[:, -1] if R else np.zeros(0)
        self.T_final = np.exp(-total)
        self.opacity = -np.expm1(-total)
        if self.opts.mode == "decode_first":
            return self._forward_decode_first()
        return self._forward_early()

    def _forward_decode_first(self):
        s = self.s
        feat = np.concatenate([self.f, self.dir_feat[s.ray].astype(self.f.dtype)], axis=1)
        self.c, self.r_acts = radiance_forward(self.model.decoders, feat)
        c = self.c.astype(np.float64)
        rgb = np.stack([np.bincount(s.ray, weights=self.w * c[:, k], minlength=s.n_rays)
                        for k in range(3)], axis=1)
        return rgb + self.T_final[:, None] * self.bg

    def _forward_early(self):
        s = self.s
        f = self.f.astype(np.float64)
        self.wf = _pad(self.w[:, None] * f, s.ray, self.slot, self.shape)
        Fsum = self.wf.sum(axis=1)
        W = self.opacity
        safe = np.where(W > 0, W, 1.0)
        self.F_hat = np.where((W > 0)[:, None], Fsum / safe[:, None], 0.0)
        inp = np.concatenate([self.F_hat, self.dir_feat], axis=1)
        raw, self.r_acts = self.model.decoders.radiance.forward(inp.astype(self.model.dtype))
        self.y = sigmoid(raw).astype(np.float64)
        return W[:, None] * self.y + (1.0 - W)[:, None] * self.bg

    def backward(self, grad_rgb):
        """Accumulate into ``model.table.grad``; return (density, radiance) grads."""
        m, s = self.model, self.s
        g = np.asarray(grad_rgb, dtype=np.float64)
        dt = m.dtype
        if self.opts.mode == "decode_first":
            c = self.c.astype(np.float64)
            gc = self.w[:, None] * g[s.ray]
            r_grads, g_in = m.decoders.radiance.backward(
                self.r_acts, (gc * c * (1.0 - c)).astype(dt))
            g_f = g_in[:, :self.f.shape[1]].astype(np.float64)
            wc = _pad(self.w[:, None] * c, s.ray, self.slot, self.shape)
            suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1][s.ray, self.slot] - wc[s.ray, self.slot]
            after = suffix + self.T_final[s.ray, None] * self.bg
            g_tau = np.einsum("nk,nk->n", g[s.ray], self.T_next[:, None] * c - after)
        else:
            W = self.opacity
            y = self.y
            gy = W[:, None] * g
            r_grads, g_in = m.decoders.radiance.backward(
                self.r_acts, (gy * y * (1.0 - y)).astype(dt))
            FL = self.F_hat.shape[1]
            g_hat = g_in[:, :FL].astype(np.float64)
            safe = np.where(W > 0, W, 1.0)
            g_F = np.where((W > 0)[:, None], g_hat / safe[:, None], 0.0)
            g_W = np.einsum("rk,rk->r", g, y - self.bg) - np.where(
                W > 0, np.einsum("rk,rk->r", g_hat, self.F_hat) / safe, 0.0)
            f = self.f.astype(np.float64)
            g_f = self.w[:, None] * g_F[s.ray]
            suffix = np.cumsum(self.wf[:, ::-1], axis=1)[:, ::-1][s.ray, self.slot] - self.wf[s.ray, self.slot]
            g_tau = np.einsum("nk,nk->n", g_F[s.ray], self.T_next[:, None] * f - suffix)
            g_tau += g_W[s.ray] * self.T_final[s.ray]
        g_sigma = g_tau * s.delta
        if self.mask is not None:
            g_sigma = g_sigma * self.mask
        g_raw = (g_sigma * self.sigma.astype(np.float64))[:, None]
        d_grads, g_fd = m.decoders.density.backward(self.d_acts, g_raw.astype(dt))
        g_f = g_f + g_fd.astype(np.float64)
        encode_positions_backward(m.table, s.tet, s.bary, g_f)
        return d_grads, r_grads


def render_samples(model, samples: SampleBatch, view_dirs, opts: RenderOptions, mask=None):
    return RenderPass(model, samples, view_dirs, opts, mask).forward()


def render_rays(model: ImpostorModel, origins, dirs, opts: RenderOptions, view_dirs=None,
                mask_fn=None, chunk: int = 8192) -> np.ndarray:
    """Colours ``(R, 3)`` for rays; ``view_dirs`` overrides the SH input direction
    and ``mask_fn(model, samples)`` returns per-sample {0, 1} density weights."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    vd = d if view_dirs is None else np.atleast_2d(np.asarray(view_dirs, dtype=np.float64))
    out = np.empty((len(o), 3))
    for a in range(0, len(o), chunk):
        b = min(a + chunk, len(o))
        _, samples = sample_rays(model.mesh, o[a:b], d[a:b], opts.sampler)
        mask = None if mask_fn is None else mask_fn(model, samples)
        out[a:b] = render_samples(model, samples, vd[a:b], opts, mask)
    return out


def render_ray(model: ImpostorModel, ray: Ray, opts: RenderOptions, view_dir=None) -> np.ndarray:
    vd = None if view_dir is None else np.asarray(view_dir, float)[None]
    return render_rays(model, ray.origin[None], ray.direction[None], opts, vd)[0]


def render_ray_decode_first(model: ImpostorModel, ray: Ray, opts: RenderOptions, view_dir=None):
    return render_ray(model, ray, RenderOptions("decode_first", opts.sampler, opts.background), view_dir)


def render_ray_early_integration(model: ImpostorModel, ray: Ray, opts: RenderOptions, view_dir=None):
    return render_ray(model, ray, RenderOptions("early_integration", opts.sampler, opts.background),
                      view_dir)


def render_image(model: ImpostorModel, camera: Camera, opts: RenderOptions, threads: int = 1,
                 mask_fn=None, chunk: int = 4096) -> Image:
    o, d = camera.rays()
    starts = list(range(0, len(o), chunk))

    def work(a):
        b = min(a + chunk, len(o))
        return render_rays(model, o[a:b], d[a:b], opts, mask_fn=mask_fn, chunk=chunk)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(a) for a in starts]
    rgb = np.clip(np.concatenate(parts), 0.0, 1.0)
    return Image(rgb.reshape(camera.height, camera.width, 3))


# ---------------------------------------------------------------------------
# metrics and files

PSNR_IDENTICAL = 99.0


def psnr(a: Image, b: Image, mask=None) -> float:
    if a.rgb.shape != b.rgb.shape:
        raise ValueError(f"image sizes differ: {a.rgb.shape} vs {b.rgb.shape}")
    diff = (a.rgb - b.rgb) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(diff.mean()) if diff.size else 0.0
    if mse == 0.0:
        return PSNR_IDENTICAL
    return min(10.0 * np.log10(1.0 / mse), PSNR_IDENTICAL)


def to_bytes(img: Image) -> np.ndarray:
    return np.round(np.clip(img.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: Image) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode())
        fh.write(to_bytes(img).tobytes())


def read_ppm(path) -> Image:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pix = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return Image(pix.reshape(h, w, 3) / 255.0)


def write_png(path, img: Image) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(to_bytes(img), "RGB").save(path)


def format_camera(cam: Camera) -> str:
    vals = [*cam.position, *cam.rotation.reshape(-1), cam.focal]
    return "cam " + " ".join(f"{v:.17g}" for v in vals) + f" {cam.width} {cam.height}"


def parse_camera(line: str) -> Camera:
    parts = line.split()
    if len(parts) != 16 or parts[0] != "cam":
        raise ValueError(f"bad camera line: {line!r}")
    nums = [float(x) for x in parts[1:14]]
    return Camera(nums[:3], np.array(nums[3:12]).reshape(3, 3), nums[12], int(parts[14]), int(parts[15]))


def save_cameras(path, cams) -> None:
    with open(path, "w") as fh:
        fh.write("".join(format_camera(c) + "\n" for c in cams))


def load_cameras(path) -> list[Camera]:
    with open(path) as fh:
        return [parse_camera(line) for line in fh if line.strip() and not line.startswith("#")]

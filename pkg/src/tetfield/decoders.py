"""Tiny ReLU MLP decoders with hand-written reverse mode.

The density net maps position features to ``sigma = exp(raw)``; the radiance
net maps position features concatenated with SH direction features to
``rgb = logistic(raw)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MLP:
    """Dense layers with ReLU between them and a linear last layer.

    Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` with
    ``W`` shaped ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes, params=None, seed=0, dtype=np.float32):
        self.sizes = tuple(int(s) for s in sizes)
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                params.append(rng.uniform(-bound, bound, fan_out))
        self.params = [np.ascontiguousarray(p, dtype=dtype) for p in params]
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.params[2 * i].shape != (fan_in, fan_out) or self.params[2 * i + 1].shape != (fan_out,):
                raise ValueError(f"layer {i} parameter shapes do not match sizes {self.sizes}")

    @property
    def dtype(self):
        return self.params[0].dtype

    def copy(self) -> "MLP":
        return MLP(self.sizes, [p.copy() for p in self.params], dtype=self.dtype)

    def astype(self, dtype) -> "MLP":
        return MLP(self.sizes, [p.astype(dtype) for p in self.params], dtype=dtype)

    def zero_like(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite decoder input")
        acts = [x]
        n_layers = len(self.params) // 2
        h = x
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0)
                acts.append(h)
        return h, acts

    def backward(self, acts, grad_out):
        """Parameter gradients and input gradient for a cached forward pass."""
        g = np.asarray(grad_out, dtype=self.dtype)
        n_layers = len(self.params) // 2
        grads: list = [None] * len(self.params)
        for i in reversed(range(n_layers)):
            a = acts[i]
            grads[2 * i] = a.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
            if i > 0:
                g = g * (a > 0)
        return grads, g


@dataclass
class DecoderParams:
    density: MLP
    radiance: MLP

    @classmethod
    def create(cls, pos_dim: int, dir_dim: int, seed: int = 0, dtype=np.float32,
               density_hidden: int = 16, radiance_hidden: int = 64) -> "DecoderParams":
        return cls(MLP((pos_dim, density_hidden, 1), seed=seed, dtype=dtype),
                   MLP((pos_dim + dir_dim, radiance_hidden, radiance_hidden, 3),
                       seed=seed + 1, dtype=dtype))

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.density.copy(), self.radiance.copy())

    def astype(self, dtype) -> "DecoderParams":
        return DecoderParams(self.density.astype(dtype), self.radiance.astype(dtype))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def density_forward(params: DecoderParams, f_p):
    """``sigma = exp(raw)`` per row of position features; returns (sigma, cache)."""
    raw, acts = params.density.forward(np.atleast_2d(f_p))
    sigma = np.exp(raw[:, 0])
    return sigma, acts


def density_backward(params: DecoderParams, acts, sigma, grad_sigma):
    grad_raw = (np.asarray(grad_sigma) * sigma)[:, None]
    return params.density.backward(acts, grad_raw)


def radiance_forward(params: DecoderParams, features):
    raw, acts = params.radiance.forward(np.atleast_2d(features))
    return sigmoid(raw), acts


def radiance_backward(params: DecoderParams, acts, rgb, grad_rgb):
    grad_raw = np.asarray(grad_rgb) * rgb * (1.0 - rgb)
    return params.radiance.backward(acts, grad_raw)


def decoder_backward(params: DecoderParams, cache, upstream):
    """Reverse mode through both decoders.

    ``cache`` is ``(density_acts, sigma, radiance_acts, rgb)`` and
    ``upstream`` is ``(grad_sigma, grad_rgb)``; either half may be ``None``.
    Returns ``(density_grads, radiance_grads, grad_pos_features)`` where the
    last is the gradient reaching the position features from both nets.
    """
    d_acts, sigma, r_acts, rgb = cache
    g_sigma, g_rgb = upstream
    pos_dim = params.density.sizes[0]
    d_grads, r_grads, g_pos = None, None, 0.0
    if g_sigma is not None:
        d_grads, gx = density_backward(params, d_acts, sigma, g_sigma)
        g_pos = g_pos + gx
    if g_rgb is not None:
        r_grads, gx = radiance_backward(params, r_acts, rgb, g_rgb)
        g_pos = g_pos + gx[:, :pos_dim]
    return d_grads, r_grads, g_pos

"""Barycentric-space ray sampling with cone-angle step growth.

Every tet crossing is parameterized by ``alpha`` in ``[0, 1]`` from entry to
exit, with barycentrics ``(1 - alpha) * bary_in + alpha * bary_out``.  Steps
grow as ``step_{i+1} = step_i + cone_angle * A_i`` where ``A_i`` is the total
alpha travelled since the first crossing of the ray.  Because every crossing
spans exactly one unit of alpha, the step pattern depends only on how many
crossings a ray has; it is generated once per parameter set and reused.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Ray, SegmentBatch, TetMesh, intersect_ray, intersect_rays

_SNAP = 1e-12


@dataclass(frozen=True)
class SamplerParams:
    cone_angle: float = 0.01
    base_step: float = 0.05
    max_samples_per_ray: int = 512

    def __post_init__(self):
        if not 0.0 <= self.cone_angle < 1.0:
            raise ValueError("cone_angle must lie in [0, 1)")
        if not 0.0 < self.base_step <= 1.0:
            raise ValueError("base_step must lie in (0, 1]")
        if self.max_samples_per_ray < 1:
            raise ValueError("max_samples_per_ray must be positive")


@dataclass(frozen=True)
class TetSample:
    tet: int
    bary: np.ndarray  # barycentrics at the interval midpoint
    alpha: float  # interval end (the stepping position)
    alpha_mid: float
    dir: np.ndarray
    d_alpha: float


@dataclass
class SampleBatch:
    """Flat samples for many rays, grouped by ray via ``offsets``.

    ``delta`` is the Manhattan measure of each sample's interval and ``t`` the
    world ray parameter of its midpoint.
    """

    ray: np.ndarray
    segment: np.ndarray
    tet: np.ndarray
    bary: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    delta: np.ndarray
    t: np.ndarray
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.tet)

    @property
    def n_rays(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def slot(self) -> np.ndarray:
        """Position of each sample within its ray."""
        return np.arange(len(self.ray)) - self.offsets[self.ray]

    def select_rays(self, rays: np.ndarray) -> "SampleBatch":
        """Sub-batch of the given rays, renumbered ``0..len(rays)-1``."""
        rays = np.asarray(rays, dtype=np.int64)
        counts = self.offsets[rays + 1] - self.offsets[rays]
        offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
        idx = np.repeat(self.offsets[rays] - offsets[:-1], counts) + np.arange(offsets[-1])
        new_ray = np.repeat(np.arange(len(rays)), counts)
        return SampleBatch(new_ray, self.segment[idx], self.tet[idx], self.bary[idx],
                           self.a0[idx], self.a1[idx], self.delta[idx], self.t[idx], offsets)


class StepPattern:
    """Sample intervals for a ray with ``k`` crossings, grown on demand."""

    def __init__(self, params: SamplerParams):
        self.params = params
        self.seg: list[int] = []
        self.a0: list[float] = []
        self.a1: list[float] = []
        self.per_segment_end: list[int] = []  # cumulative sample count after k crossings
        self._step = params.base_step
        self._travelled = 0.0

    def _grow(self, k: int) -> None:
        p = self.params
        while len(self.per_segment_end) < k:
            s = len(self.per_segment_end)
            a = 0.0
            while a < 1.0 and len(self.a0) < p.max_samples_per_ray:
                nxt = a + self._step
                if nxt >= 1.0 - _SNAP:
                    nxt = 1.0
                self._travelled += nxt - a
                self.seg.append(s)
                self.a0.append(a)
                self.a1.append(nxt)
                self._step += p.cone_angle * self._travelled
                a = nxt
            self.per_segment_end.append(len(self.a0))

    def arrays(self, k: int):
        self._grow(k)
        return (np.asarray(self.seg, dtype=np.int64), np.asarray(self.a0),
                np.asarray(self.a1), np.asarray([0] + self.per_segment_end, dtype=np.int64))

    def count(self, k: np.ndarray) -> np.ndarray:
        kmax = int(k.max()) if len(k) else 0
        _, _, _, ends = self.arrays(kmax)
        return ends[k]


@lru_cache(maxsize=32)
def step_pattern(params: SamplerParams) -> StepPattern:
    return StepPattern(params)


def step_sequence(params: SamplerParams, n_segments: int = 1):
    """``(segment, alpha_start, alpha_end)`` arrays for a ray with n crossings."""
    seg, a0, a1, ends = step_pattern(params).arrays(n_segments)
    n = ends[n_segments]
    return seg[:n], a0[:n], a1[:n]


def sample_segments(segs: SegmentBatch, params: SamplerParams) -> SampleBatch:
    pattern = step_pattern(params)
    k = np.diff(segs.offsets)
    counts = pattern.count(k)
    seg_pat, a0_pat, a1_pat, _ = pattern.arrays(int(k.max()) if len(k) else 0)
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    n = int(offsets[-1])
    ray = np.repeat(np.arange(segs.n_rays), counts)
    j = np.arange(n) - offsets[ray]
    segment = segs.offsets[ray] + seg_pat[j]
    a0, a1 = a0_pat[j], a1_pat[j]
    mid = 0.5 * (a0 + a1)
    bi, bo = segs.bary_in[segment], segs.bary_out[segment]
    bary = (1.0 - mid)[:, None] * bi + mid[:, None] * bo
    l1 = np.abs(bo - bi).sum(axis=1)
    delta = (a1 - a0) * l1
    t = segs.t_in[segment] + mid * (segs.t_out[segment] - segs.t_in[segment])
    return SampleBatch(ray, segment, segs.tet[segment], bary, a0, a1, delta, t, offsets)


def sample_rays(mesh: TetMesh, origins, dirs, params: SamplerParams,
                t_min=0.0, t_max=np.inf) -> tuple[SegmentBatch, SampleBatch]:
    segs = intersect_rays(mesh, origins, dirs, t_min, t_max)
    return segs, sample_segments(segs, params)


def sample_ray(mesh: TetMesh, ray: Ray, params: SamplerParams) -> list[TetSample]:
    segs = intersect_ray(mesh, ray)
    out = []
    if not segs:
        return out
    seg, a0, a1 = step_sequence(params, len(segs))
    for s, lo, hi in zip(seg, a0, a1):
        sg = segs[s]
        mid = 0.5 * (lo + hi)
        bary = (1.0 - mid) * sg.bary_in + mid * sg.bary_out
        out.append(TetSample(sg.tet, bary, float(hi), float(mid), ray.direction, float(hi - lo)))
    return out

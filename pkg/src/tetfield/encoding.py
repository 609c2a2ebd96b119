"""Per-tet 4D multiresolution hash encoding and spherical-harmonic direction
encoding.

Each tet owns a contiguous slice of ``2**per_tet_log2`` feature rows in one
packed table (tet-major).  Inside a slice the levels get consecutive
sub-slices; coarse levels whose full ``(res + 1)**4`` corner lattice fits are
addressed densely, finer levels through a 4-coordinate XOR-prime hash.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

MIN_PER_TET_LOG2 = 4


@dataclass(frozen=True)
class HashLayout:
    tet_count: int
    log2_size: int
    levels: int
    features: int
    per_tet_log2: int
    level_res: tuple
    level_offset: tuple
    level_size: tuple
    level_dense: tuple

    @property
    def slice_size(self) -> int:
        return 1 << self.per_tet_log2

    @property
    def rows(self) -> int:
        return self.tet_count * self.slice_size

    @property
    def out_dim(self) -> int:
        return self.levels * self.features

    def arrays(self):
        return (np.asarray(self.level_res, np.int64), np.asarray(self.level_offset, np.int64),
                np.asarray(self.level_size, np.int64), np.asarray(self.level_dense, np.uint8))

    def with_tet_count(self, tet_count: int) -> "HashLayout":
        """Same per-tet slicing for a different number of tets."""
        return make_layout(tet_count, self.log2_size, self.levels, self.features,
                           max_res=self.level_res[-1], min_res=self.level_res[0],
                           per_tet_log2=self.per_tet_log2)


def level_resolutions(levels: int, min_res: int = 2, max_res: int = 16) -> list[int]:
    if levels == 1:
        return [min_res]
    growth = (max_res / min_res) ** (1.0 / (levels - 1))
    out: list[int] = []
    for l in range(levels):
        r = int(round(min_res * growth**l))
        out.append(max(r, out[-1] + 1) if out else r)
    return out


def per_tet_log2_size(tet_count: int, log2_size: int) -> int:
    """Per-tet budget so that ``tet_count * 2**H' <= 2**H`` (floored at 2**4)."""
    return max(log2_size - math.ceil(math.log2(tet_count)), MIN_PER_TET_LOG2)


def make_layout(tet_count: int, log2_size: int = 19, levels: int = 8, features: int = 2,
                max_res: int = 16, min_res: int = 2, per_tet_log2: int | None = None) -> HashLayout:
    if min(tet_count, log2_size, levels, features) <= 0:
        raise ValueError("layout parameters must be positive")
    h = per_tet_log2 if per_tet_log2 is not None else per_tet_log2_size(tet_count, log2_size)
    slice_size = 1 << h
    if levels > slice_size:
        raise ValueError("more levels than rows in a per-tet slice")
    res = level_resolutions(levels, min_res, max_res)
    offsets, sizes, dense = [], [], []
    used = 0
    for l, r in enumerate(res):
        share = (slice_size - used) // (levels - l)
        full = (r + 1) ** 4
        if full <= share:
            size, is_dense = full, True
        else:
            size, is_dense = share, False
        offsets.append(used)
        sizes.append(size)
        dense.append(is_dense)
        used += size
    return HashLayout(tet_count, log2_size, levels, features, h, tuple(res),
                      tuple(offsets), tuple(sizes), tuple(dense))


def hash_index(layout: HashLayout, tet: int, level: int, corner) -> int:
    """Row of a 4D grid corner of ``level`` inside the packed table."""
    res = layout.level_res[level]
    c = np.asarray(corner, dtype=np.int64)
    if c.shape != (4,) or c.min() < 0 or c.max() > res:
        raise ValueError(f"corner {corner} outside level resolution {res}")
    slot = int(kernels.corner_slots(c[None], res, layout.level_size[level],
                                    layout.level_dense[level])[0])
    return tet * layout.slice_size + layout.level_offset[level] + slot


class FeatureTable:
    """Packed trainable features ``(rows, F)`` plus a same-shaped gradient buffer."""

    def __init__(self, layout: HashLayout, data: np.ndarray | None = None,
                 dtype=np.float32, seed: int | None = 0, init_scale: float = 1e-4):
        self.layout = layout
        if data is None:
            rng = np.random.default_rng(seed)
            data = rng.uniform(-init_scale, init_scale, (layout.rows, layout.features))
        data = np.ascontiguousarray(data, dtype=dtype)
        if data.shape != (layout.rows, layout.features):
            raise ValueError(f"table shape {data.shape} does not match layout")
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "FeatureTable":
        return FeatureTable(self.layout, self.data.astype(dtype), dtype=dtype)

    def copy(self) -> "FeatureTable":
        return FeatureTable(self.layout, self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def tet_rows(self, tet: int) -> slice:
        s = self.layout.slice_size
        return slice(tet * s, (tet + 1) * s)


def encode_positions(table: FeatureTable, tets, bary) -> np.ndarray:
    """Concatenated per-level features ``(N, L*F)`` for (tet, barycentric) pairs."""
    lay = table.layout
    return kernels.encode_forward(table.data, np.asarray(tets, np.int64),
                                  np.asarray(bary, np.float64), *lay.arrays(), lay.slice_size)


def encode_positions_backward(table: FeatureTable, tets, bary, grad_out) -> None:
    lay = table.layout
    kernels.encode_backward(table.grad, np.asarray(tets, np.int64), np.asarray(bary, np.float64),
                            np.asarray(grad_out, np.float64), *lay.arrays(), lay.slice_size)


def encode_position(table: FeatureTable, tet: int, bary) -> np.ndarray:
    return encode_positions(table, [tet], np.asarray(bary, float)[None])[0]


def encode_position_backward(table: FeatureTable, tet: int, bary, upstream_grad) -> None:
    encode_positions_backward(table, [tet], np.asarray(bary, float)[None],
                              np.asarray(upstream_grad, float)[None])


# ---------------------------------------------------------------------------
# spherical harmonics: real, orthonormal, no Condon-Shortley phase

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
         1.0925484305920792, 0.5462742152960396)
SH_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
         0.3731763325901154, 0.4570457994644658, 1.445305721320277, 0.5900435899266435)


def sh_basis(dirs, degree: int) -> np.ndarray:
    """``degree**2`` real SH values per unit direction, ordered by (l, m), m ascending."""
    if not 1 <= degree <= 4:
        raise ValueError("SH degree must be in 1..4")
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-6):
        raise ValueError("direction must be unit length")
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = [np.full_like(x, SH_C0)]
    if degree > 1:
        out += [SH_C1 * y, SH_C1 * z, SH_C1 * x]
    if degree > 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (3 * zz - 1),
                SH_C2[3] * x * z, SH_C2[4] * (xx - yy)]
    if degree > 3:
        out += [SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * x * y * z,
                SH_C3[2] * y * (5 * zz - 1), SH_C3[3] * z * (5 * zz - 3),
                SH_C3[4] * x * (5 * zz - 1), SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=-1)


def encode_direction(direction, degree: int = 4) -> np.ndarray:
    return sh_basis(np.asarray(direction, float)[None], degree)[0]

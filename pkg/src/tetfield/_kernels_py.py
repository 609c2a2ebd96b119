"""Pure numpy implementation of the hash-grid gather/scatter kernels.

Signatures mirror the compiled ``_ckernels`` module exactly; ``kernels``
picks one at import time.
"""

import numpy as np

PRIMES = (1, 2654435761, 805459861, 3674653429)
_MASK32 = np.uint64(0xFFFFFFFF)

# the 16 corners of a 4D voxel, bit k of the corner id selects axis k
CORNERS = ((np.arange(16)[:, None] >> np.arange(4)[None, :]) & 1).astype(np.int64)


def corner_slots(coords, res, size, dense):
    """Slot inside a level's sub-slice for integer 4D grid corners ``(..., 4)``."""
    coords = np.asarray(coords, dtype=np.int64)
    if dense:
        r1 = res + 1
        return coords[..., 0] + r1 * (coords[..., 1] + r1 * (coords[..., 2] + r1 * coords[..., 3]))
    c = coords.astype(np.uint64)
    h = np.zeros(c.shape[:-1], dtype=np.uint64)
    for k in range(4):
        h ^= (c[..., k] * np.uint64(PRIMES[k])) & _MASK32
    return (h % np.uint64(size)).astype(np.int64)


def _level_corners(bary, res):
    x = np.clip(bary, 0.0, 1.0) * res
    base = np.minimum(np.floor(x), res - 1).astype(np.int64)
    frac = x - base
    coords = base[:, None, :] + CORNERS[None]
    w = np.where(CORNERS[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=-1)
    return coords, w


def _level_index(tets, bary, res, offset, size, dense, slice_size):
    coords, w = _level_corners(bary, res)
    slots = corner_slots(coords, res, size, dense)
    return tets[:, None] * slice_size + offset + slots, w


def encode_forward(data, tets, bary, level_res, level_offset, level_size, level_dense, slice_size):
    n, F = len(tets), data.shape[1]
    L = len(level_res)
    out = np.empty((n, L * F), dtype=data.dtype)
    tets = np.asarray(tets, dtype=np.int64)
    for l in range(L):
        idx, w = _level_index(tets, bary, int(level_res[l]), int(level_offset[l]),
                              int(level_size[l]), bool(level_dense[l]), slice_size)
        out[:, l * F:(l + 1) * F] = np.einsum("nc,ncf->nf", w.astype(data.dtype), data[idx])
    return out


def encode_backward(grad_data, tets, bary, grad_out, level_res, level_offset, level_size,
                    level_dense, slice_size):
    F = grad_data.shape[1]
    tets = np.asarray(tets, dtype=np.int64)
    for l in range(len(level_res)):
        idx, w = _level_index(tets, bary, int(level_res[l]), int(level_offset[l]),
                              int(level_size[l]), bool(level_dense[l]), slice_size)
        g = grad_out[:, l * F:(l + 1) * F]
        flat = idx.reshape(-1)
        for f in range(F):
            contrib = (w * g[:, f:f + 1]).reshape(-1)
            grad_data[:, f] += np.bincount(flat, weights=contrib, minlength=len(grad_data))

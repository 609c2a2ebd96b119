"""The trainable model (proxy mesh + packed hash table + decoders) and its
``NIMP01`` checkpoint container.

Checkpoint layout, all little-endian::

    b"NIMP01"                 magic
    u32 header_len            length of the JSON header
    header (utf-8 JSON)       layout, decoder sizes, mesh counts, sh degree
    f64[nv * 3]               vertices
    i32[nt * 4]               tets
    f32[rows * F]             feature table
    f32[...]                  decoder parameters, density then radiance, in order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .decoders import MLP, DecoderParams
from .encoding import FeatureTable, HashLayout, make_layout
from .geometry import TetMesh, build_mesh

MAGIC = b"NIMP01"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Capacity knobs for :meth:`ImpostorModel.create`."""

    log2_size: int = 19
    levels: int = 8
    features: int = 2
    sh_degree: int = 4
    max_res: int = 16
    per_tet_log2: int | None = None


@dataclass
class ImpostorModel:
    mesh: TetMesh
    table: FeatureTable
    decoders: DecoderParams
    sh_degree: int = 4

    @property
    def layout(self) -> HashLayout:
        return self.table.layout

    @property
    def dtype(self):
        return self.table.dtype

    @classmethod
    def create(cls, mesh: TetMesh, log2_size: int = 19, levels: int = 8, features: int = 2,
               sh_degree: int = 4, max_res: int = 16, seed: int = 0, dtype=np.float32,
               per_tet_log2: int | None = None) -> "ImpostorModel":
        layout = make_layout(mesh.n_tets, log2_size, levels, features, max_res=max_res,
                             per_tet_log2=per_tet_log2)
        table = FeatureTable(layout, dtype=dtype, seed=seed)
        dec = DecoderParams.create(layout.out_dim, sh_degree**2, seed=seed + 1, dtype=dtype)
        return cls(mesh, table, dec, sh_degree)

    @classmethod
    def from_config(cls, mesh: TetMesh, cfg: ModelConfig, seed: int = 0,
                    dtype=np.float32) -> "ImpostorModel":
        return cls.create(mesh, cfg.log2_size, cfg.levels, cfg.features, cfg.sh_degree,
                          cfg.max_res, seed=seed, dtype=dtype, per_tet_log2=cfg.per_tet_log2)

    def with_mesh(self, mesh: TetMesh) -> "ImpostorModel":
        """Share fields, swap the proxy (deformation keeps topology)."""
        if mesh.n_tets != self.mesh.n_tets:
            raise ValueError("deformed mesh must keep the tet count")
        return ImpostorModel(mesh, self.table, self.decoders, self.sh_degree)

    def copy(self) -> "ImpostorModel":
        return ImpostorModel(self.mesh, self.table.copy(), self.decoders.copy(), self.sh_degree)

    def astype(self, dtype) -> "ImpostorModel":
        return ImpostorModel(self.mesh, self.table.astype(dtype), self.decoders.astype(dtype),
                             self.sh_degree)

    def parameters(self) -> list[np.ndarray]:
        return [self.table.data, *self.decoders.density.params, *self.decoders.radiance.params]


def _layout_dict(lay: HashLayout) -> dict:
    return {
        "tet_count": lay.tet_count, "log2_size": lay.log2_size, "levels": lay.levels,
        "features": lay.features, "per_tet_log2": lay.per_tet_log2,
        "min_res": lay.level_res[0], "max_res": lay.level_res[-1],
    }


def save_model(path, model: ImpostorModel) -> None:
    header = {
        "version": 1,
        "layout": _layout_dict(model.layout),
        "sh_degree": model.sh_degree,
        "density_sizes": list(model.decoders.density.sizes),
        "radiance_sizes": list(model.decoders.radiance.sizes),
        "n_vertices": model.mesh.n_vertices,
        "n_tets": model.mesh.n_tets,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.mesh.vertices.astype("<f8").tobytes())
        fh.write(model.mesh.tets.astype("<i4").tobytes())
        fh.write(model.table.data.astype("<f4").tobytes())
        for p in (*model.decoders.density.params, *model.decoders.radiance.params):
            fh.write(p.astype("<f4").tobytes())


def load_model(path, dtype=np.float32) -> ImpostorModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MAGIC:
        raise CheckpointError(f"{path}: not a NIMP01 checkpoint")
    (n,) = struct.unpack_from("<I", raw, 6)
    try:
        header = json.loads(raw[10:10 + n])
    except ValueError as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    pos = 10 + n

    def take(count, fmt):
        nonlocal pos
        size = np.dtype(fmt).itemsize * count
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated")
        arr = np.frombuffer(raw, dtype=fmt, count=count, offset=pos).copy()
        pos += size
        return arr

    nv, nt = header["n_vertices"], header["n_tets"]
    verts = take(nv * 3, "<f8").reshape(nv, 3)
    tets = take(nt * 4, "<i4").reshape(nt, 4)
    ld = header["layout"]
    layout = make_layout(ld["tet_count"], ld["log2_size"], ld["levels"], ld["features"],
                         max_res=ld["max_res"], min_res=ld["min_res"],
                         per_tet_log2=ld["per_tet_log2"])
    table = FeatureTable(layout, take(layout.rows * layout.features, "<f4").reshape(
        layout.rows, layout.features), dtype=dtype)

    def mlp(sizes):
        params = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            params.append(take(a * b, "<f4").reshape(a, b))
            params.append(take(b, "<f4"))
        return MLP(sizes, params, dtype=dtype)

    dec = DecoderParams(mlp(header["density_sizes"]), mlp(header["radiance_sizes"]))
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    mesh = build_mesh(verts, tets)
    return ImpostorModel(mesh, table, dec, header["sh_degree"])

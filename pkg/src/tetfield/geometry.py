"""Tetrahedral proxy mesh: construction, barycentric maps, point location and
ray traversal.

Vertices are stored as ``(V, 3)`` float64 arrays and tetrahedra as ``(T, 4)``
int64 arrays whose winding is canonicalized so every tet has positive signed
volume.  Triangular faces are deduplicated and oriented outward with respect
to their first owning tet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEGENERATE_TOL = 1e-12
INSIDE_TOL = 1e-12
MIN_SEGMENT = 1e-9
COPLANAR_TOL = 1e-10

# outward-facing local faces: face k is opposite local vertex k
LOCAL_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)


class MeshError(ValueError):
    """Raised for malformed mesh input (bad indices, degenerate tets, bad files)."""


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, direction) -> "Ray":
        d = np.asarray(direction, dtype=np.float64)
        return cls(origin, d / np.linalg.norm(d))


@dataclass(frozen=True)
class TetSegment:
    tet: int
    t_in: float
    t_out: float
    bary_in: np.ndarray
    bary_out: np.ndarray


@dataclass
class SegmentBatch:
    """Ray/tet crossings for many rays, sorted by (ray, t_in, tet).

    ``offsets`` has length ``n_rays + 1``; segments of ray ``r`` occupy
    ``offsets[r]:offsets[r + 1]``.
    """

    ray: np.ndarray
    tet: np.ndarray
    t_in: np.ndarray
    t_out: np.ndarray
    bary_in: np.ndarray
    bary_out: np.ndarray
    offsets: np.ndarray

    @property
    def n_rays(self) -> int:
        return len(self.offsets) - 1

    def __len__(self) -> int:
        return len(self.tet)

    def segments_of(self, r: int) -> list[TetSegment]:
        lo, hi = self.offsets[r], self.offsets[r + 1]
        return [
            TetSegment(int(self.tet[i]), float(self.t_in[i]), float(self.t_out[i]),
                       self.bary_in[i].copy(), self.bary_out[i].copy())
            for i in range(lo, hi)
        ]


@dataclass
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    faces: np.ndarray = field(repr=False)
    face_tets: np.ndarray = field(repr=False)
    tet_faces: np.ndarray = field(repr=False)
    overlapping_pairs: np.ndarray = field(repr=False)
    _inv: np.ndarray = field(repr=False)
    _grid: Optional["FaceGrid"] = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def has_overlaps(self) -> bool:
        return len(self.overlapping_pairs) > 0

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tets[:, 1] < 0)

    def adjacency(self) -> dict:
        """Map sorted face vertex triple to ``(tet, tet or -1)``."""
        return {
            tuple(sorted(int(i) for i in f)): (int(a), int(b))
            for f, (a, b) in zip(self.faces, self.face_tets)
        }

    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tets)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def grid(self) -> "FaceGrid":
        if self._grid is None:
            self._grid = FaceGrid(self)
        return self._grid

    def with_vertices(self, vertices) -> "TetMesh":
        """Same topology, new vertex positions (tets keep their stored order)."""
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if v.shape != self.vertices.shape:
            raise MeshError(f"expected {self.n_vertices} vertices, got {len(v)}")
        vols = signed_volumes(v, self.tets)
        bad = np.flatnonzero(vols <= 0)
        if len(bad):
            raise MeshError(f"inverted or flat tets after deformation: {bad.tolist()}")
        return _assemble(v, self.tets, self.faces, self.face_tets, self.tet_faces)


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    e = p[:, 1:] - p[:, :1]
    return np.linalg.det(e) / 6.0


def _bbox_scale(vertices: np.ndarray) -> float:
    ext = vertices.max(axis=0) - vertices.min(axis=0)
    return float(max(ext.max(), 1e-300))


def build_mesh(vertices: Sequence, tets: Sequence) -> TetMesh:
    """Validate input, canonicalize windings and derive faces and adjacency."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(tets, dtype=np.int64).reshape(-1, 4).copy()
    if len(t) == 0:
        raise MeshError("mesh needs at least one tetrahedron")
    if t.min() < 0 or t.max() >= len(v):
        raise MeshError(f"tet vertex index out of range [0, {len(v)})")
    if np.any([len(set(row)) < 4 for row in t.tolist()]):
        raise MeshError("tet with repeated vertex index")

    vols = signed_volumes(v, t)
    scale = _bbox_scale(v)
    degenerate = np.flatnonzero(np.abs(vols) < DEGENERATE_TOL * scale**3)
    if len(degenerate):
        raise MeshError(f"degenerate tets (volume below tolerance): {degenerate.tolist()}")
    flip = vols < 0
    t[flip, 2], t[flip, 3] = t[flip, 3].copy(), t[flip, 2].copy()

    local = t[:, LOCAL_FACES]  # (T, 4, 3) outward triangles
    keys = np.sort(local.reshape(-1, 3), axis=1)
    uniq, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if counts.max() > 2:
        raise MeshError("a triangular face is shared by more than two tets")
    faces = local.reshape(-1, 3)[first]
    face_tets = np.full((len(uniq), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(len(t)), 4)
    order = np.argsort(inverse, kind="stable")
    sorted_faces = inverse[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_faces)) + 1]
    face_tets[sorted_faces[starts], 0] = owner[order[starts]]
    second = starts[counts[sorted_faces[starts]] == 2] + 1
    face_tets[sorted_faces[second], 1] = owner[order[second]]
    tet_faces = inverse.reshape(-1, 4)
    return _assemble(v, t, faces, face_tets, tet_faces)


def _assemble(v, t, faces, face_tets, tet_faces) -> TetMesh:
    p = v[t]
    e = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # columns v1-v0, v2-v0, v3-v0
    inv = np.linalg.inv(e)
    mesh = TetMesh(v, t, faces, face_tets, tet_faces, np.zeros((0, 2), np.int64), inv)
    mesh.overlapping_pairs = find_overlapping_pairs(mesh)
    return mesh


# ---------------------------------------------------------------------------
# barycentric maps


def barycentric_of_points(mesh: TetMesh, tets, points) -> np.ndarray:
    tets = np.asarray(tets, dtype=np.int64)
    p = np.asarray(points, dtype=np.float64)
    rel = p - mesh.vertices[mesh.tets[tets, 0]]
    l123 = np.einsum("...ij,...j->...i", mesh._inv[tets], rel)
    return np.concatenate([1.0 - l123.sum(axis=-1, keepdims=True), l123], axis=-1)


def barycentric_of_point(mesh: TetMesh, tet: int, p) -> np.ndarray:
    if not 0 <= tet < mesh.n_tets:
        raise IndexError(f"tet {tet} out of range")
    return barycentric_of_points(mesh, np.array([tet]), np.asarray(p, float)[None])[0]


def points_from_barycentric(mesh: TetMesh, tets, bary) -> np.ndarray:
    tets = np.asarray(tets, dtype=np.int64)
    return np.einsum("...k,...kj->...j", np.asarray(bary, dtype=np.float64),
                     mesh.vertices[mesh.tets[tets]])


def point_from_barycentric(mesh: TetMesh, tet: int, bary) -> np.ndarray:
    if not 0 <= tet < mesh.n_tets:
        raise IndexError(f"tet {tet} out of range")
    return points_from_barycentric(mesh, np.array([tet]), np.asarray(bary, float)[None])[0]


# ---------------------------------------------------------------------------
# point location


class FaceGrid:
    """Uniform 2D grid over the (y, z) extents of face bounding boxes.

    A +x ray from a point only meets faces registered in the point's column,
    so point location touches a handful of triangles.  Rebuilt lazily after
    deformation since it depends on vertex positions.
    """

    def __init__(self, mesh: TetMesh, cells_per_face: float = 2.0):
        tri = mesh.vertices[mesh.faces]
        self.tri = tri
        self.normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        self.xmax = hi[:, 0]
        self.lo = lo[:, 1:].min(axis=0)
        span = np.maximum(hi[:, 1:].max(axis=0) - self.lo, 1e-12)
        n = int(np.clip(np.sqrt(len(tri) / cells_per_face), 1, 256))
        self.shape = (n, n)
        self.cell = span / n * (1 + 1e-9)
        ilo = self._cells(lo[:, 1:])
        ihi = self._cells(hi[:, 1:])
        buckets: list[list[int]] = [[] for _ in range(n * n)]
        for f in range(len(tri)):
            for a in range(ilo[f, 0], ihi[f, 0] + 1):
                for b in range(ilo[f, 1], ihi[f, 1] + 1):
                    buckets[a * n + b].append(f)
        self.buckets = [np.array(b, dtype=np.int64) for b in buckets]

    def _cells(self, yz: np.ndarray) -> np.ndarray:
        yz = np.where(np.isfinite(yz), yz, self.lo)
        idx = np.floor((yz - self.lo) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.shape[0] - 1)

    def column_ids(self, points: np.ndarray) -> np.ndarray:
        yz = points[:, 1:]
        c = self._cells(yz)
        n = self.shape[0]
        inside = np.all((yz >= self.lo) & (yz <= self.lo + self.cell * n), axis=1)  # NaN fails
        return np.where(inside, c[:, 0] * n + c[:, 1], -1)


def _xray_hits(tri: np.ndarray, p: np.ndarray):
    """+x ray / triangle intersection, all points against all triangles.

    Returns ray parameters ``(P, F)`` with ``inf`` where there is no hit.
    Edge hits are counted (barycentric tolerance 0) so watertight columns
    never leak.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    # project onto yz: solve p.yz = a.yz + u (b-a).yz + v (c-a).yz
    e1 = (b - a)[:, 1:]
    e2 = (c - a)[:, 1:]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    rel = p[:, None, 1:] - a[None, :, 1:]
    safe = np.where(det != 0, det, 1.0)
    u = (rel[..., 0] * e2[:, 1] - rel[..., 1] * e2[:, 0]) / safe
    v = (e1[:, 0] * rel[..., 1] - e1[:, 1] * rel[..., 0]) / safe
    ok = (det != 0) & (u >= 0) & (v >= 0) & (u + v <= 1)
    x = a[:, 0] + u * (b - a)[:, 0] + v * (c - a)[:, 0]
    t = x - p[:, None, 0]
    return np.where(ok & (t >= 0), t, np.inf)


def locate_points_bruteforce(mesh: TetMesh, points, tol: float = INSIDE_TOL):
    """Lowest-index containing tet for each point, by testing every tet."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out_tet = np.full(len(p), -1, dtype=np.int64)
    out_bary = np.full((len(p), 4), np.nan)
    chunk = max(1, 2_000_000 // (4 * mesh.n_tets))
    all_t = np.arange(mesh.n_tets)
    for s in range(0, len(p), chunk):
        q = p[s:s + chunk]
        lam = barycentric_of_points(mesh, all_t[None, :], q[:, None, :])
        inside = np.all(lam >= -tol, axis=-1)
        hit = inside.any(axis=1)
        first = inside.argmax(axis=1)
        out_tet[s:s + chunk] = np.where(hit, first, -1)
        rows = np.flatnonzero(hit)
        out_bary[s + rows] = lam[rows, first[rows]]
    return out_tet, out_bary


def locate_points(mesh: TetMesh, points, tol: float = INSIDE_TOL):
    """Containing tet and barycentrics per point (``-1`` / NaN when outside).

    Casts a ray along +x and reads the winding of the first triangle hit: a
    hit from the back side of a face means the point sits inside the tet
    that owns the face outward.  Points near a face of the winner (or in a
    mesh flagged as self-overlapping) are re-resolved against all tets so
    that ties deterministically go to the lowest tet index.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if mesh.has_overlaps:
        return locate_points_bruteforce(mesh, p, tol)
    grid = mesh.grid
    tet = np.full(len(p), -1, dtype=np.int64)
    cols = grid.column_ids(p)
    for col in np.unique(cols):
        if col < 0:
            continue
        rows = np.flatnonzero(cols == col)
        cand = grid.buckets[col]
        if len(cand) == 0:
            continue
        t = _xray_hits(grid.tri[cand], p[rows])
        best = t.argmin(axis=1)
        tmin = t[np.arange(len(rows)), best]
        hit = np.isfinite(tmin)
        f = cand[best]
        facing = grid.normal[f, 0]  # dot(normal, +x)
        owner = np.where(facing > 0, mesh.face_tets[f, 0], mesh.face_tets[f, 1])
        tet[rows] = np.where(hit, owner, -1)

    bary = np.full((len(p), 4), np.nan)
    found = np.flatnonzero(tet >= 0)
    bary[found] = barycentric_of_points(mesh, tet[found], p[found])
    # ambiguous: near a face of the winner, or the winding answer disagrees
    edge_tol = 1e-9
    suspect = np.zeros(len(p), dtype=bool)
    suspect[found] = bary[found].min(axis=1) < edge_tol
    suspect[found[np.any(bary[found] < -tol, axis=1)]] = True
    if suspect.any():
        rows = np.flatnonzero(suspect)
        bt, bb = locate_points_bruteforce(mesh, p[rows], tol)
        tet[rows] = bt
        bary[rows] = bb
    return tet, bary


def locate_point(mesh: TetMesh, p) -> Optional[tuple[int, np.ndarray]]:
    t, b = locate_points(mesh, np.asarray(p, dtype=np.float64)[None])
    if t[0] < 0:
        return None
    return int(t[0]), b[0]


# ---------------------------------------------------------------------------
# overlap detection (separating axis test between tet pairs)


def _sat_overlap(pa: np.ndarray, pb: np.ndarray, eps: float) -> np.ndarray:
    """Strict interior overlap for batches of tet pairs ``(K, 4, 3)``."""
    def face_normals(p):
        f = p[:, LOCAL_FACES]
        return np.cross(f[:, :, 1] - f[:, :, 0], f[:, :, 2] - f[:, :, 0])

    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    ea = np.stack([pa[:, j] - pa[:, i] for i, j in pairs], axis=1)
    eb = np.stack([pb[:, j] - pb[:, i] for i, j in pairs], axis=1)
    cross = np.cross(ea[:, :, None, :], eb[:, None, :, :]).reshape(len(pa), 36, 3)
    axes = np.concatenate([face_normals(pa), face_normals(pb), cross], axis=1)
    norm = np.linalg.norm(axes, axis=-1, keepdims=True)
    valid = norm[..., 0] > 1e-12
    axes = axes / np.where(norm > 1e-12, norm, 1.0)
    proj_a = np.einsum("kaj,kvj->kav", axes, pa)
    proj_b = np.einsum("kaj,kvj->kav", axes, pb)
    gap = np.minimum(proj_a.max(-1), proj_b.max(-1)) - np.maximum(proj_a.min(-1), proj_b.min(-1))
    separated = valid & (gap <= eps)
    return ~separated.any(axis=1)


def find_overlapping_pairs(mesh: TetMesh) -> np.ndarray:
    v, t = mesh.vertices, mesh.tets
    if len(t) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    p = v[t]
    lo, hi = p.min(axis=1), p.max(axis=1)
    eps = 1e-9 * _bbox_scale(v)
    out = []
    for i in range(len(t) - 1):
        j = np.arange(i + 1, len(t))
        box = np.all((lo[j] < hi[i] - eps) & (hi[j] > lo[i] + eps), axis=1)
        j = j[box]
        if len(j) == 0:
            continue
        hit = _sat_overlap(np.broadcast_to(p[i], (len(j), 4, 3)), p[j], eps)
        out.extend((i, int(k)) for k in j[hit])
    return np.array(out, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# ray traversal


def _clip_rays(mesh: TetMesh, origins, dirs, t_min, t_max):
    """Clip every ray against every tet in barycentric space.

    Along ``o + t d`` the barycentrics are affine in ``t``; the ray is inside
    a tet while all four stay non-negative, so entry/exit come from the
    tightest of four linear bounds.
    """
    v0 = mesh.vertices[mesh.tets[:, 0]]
    rel = origins[:, None, :] - v0[None]
    l123 = np.einsum("tij,rtj->rti", mesh._inv, rel)
    s123 = np.einsum("tij,rj->rti", mesh._inv, dirs)
    lam = np.concatenate([1.0 - l123.sum(-1, keepdims=True), l123], axis=-1)
    slope = np.concatenate([-s123.sum(-1, keepdims=True), s123], axis=-1)
    # a ray lying in a face plane (up to round-off) is inside that face
    scale = np.abs(slope).max(-1, keepdims=True)
    on_face = (np.abs(slope) <= COPLANAR_TOL * scale) & (np.abs(lam) <= COPLANAR_TOL)
    slope = np.where(on_face, 0.0, slope)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -lam / slope
    lower = np.where(slope > 0, root, -np.inf)
    upper = np.where(slope < 0, root, np.inf)
    parallel_out = (slope == 0) & (lam < 0) & ~on_face
    t_in = np.maximum(lower.max(-1), t_min[:, None])
    t_out = np.minimum(upper.min(-1), t_max[:, None])
    ok = (t_out - t_in > MIN_SEGMENT) & ~parallel_out.any(-1)
    r, t = np.nonzero(ok)
    ti, to = t_in[r, t], t_out[r, t]
    bin_ = lam[r, t] + ti[:, None] * slope[r, t]
    bout = lam[r, t] + to[:, None] * slope[r, t]
    # the bounding constraints are exactly on a face
    k_in = lower[r, t].argmax(-1)
    k_out = upper[r, t].argmin(-1)
    entered = ti > t_min[r]
    exited = to < t_max[r]
    bin_[np.flatnonzero(entered), k_in[entered]] = 0.0
    bout[np.flatnonzero(exited), k_out[exited]] = 0.0
    bin_ = _renormalize(bin_)
    bout = _renormalize(bout)
    return r, t, ti, to, bin_, bout


def _renormalize(b: np.ndarray) -> np.ndarray:
    b = np.clip(b, 0.0, None)
    return b / b.sum(axis=-1, keepdims=True)


def _drop_shared_face_duplicates(r, t, ti, to):
    """A ray inside a shared face is clipped identically by every tet on it;
    keep only the lowest tet index of each such cluster."""
    tol = MIN_SEGMENT * np.maximum(1.0, np.abs(to))
    dup = np.zeros(len(r), bool)
    dup[1:] = ((r[1:] == r[:-1]) & (np.abs(ti[1:] - ti[:-1]) <= tol[1:])
               & (np.abs(to[1:] - to[:-1]) <= tol[1:]))
    if not dup.any():
        return np.arange(len(r))
    cluster = np.cumsum(~dup)
    pick = np.lexsort((t, cluster))
    first = np.ones(len(r), bool)
    first[1:] = cluster[pick[1:]] != cluster[pick[:-1]]
    return np.sort(pick[first])


def intersect_rays(mesh: TetMesh, origins, dirs, t_min=0.0, t_max=np.inf) -> SegmentBatch:
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(o)
    tmin = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)).copy()
    tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)).copy()
    chunk = max(1, 4_000_000 // (4 * mesh.n_tets))
    parts = []
    for s in range(0, n, chunk):
        r, t, ti, to, bi, bo = _clip_rays(mesh, o[s:s + chunk], d[s:s + chunk],
                                          tmin[s:s + chunk], tmax[s:s + chunk])
        parts.append((r + s, t, ti, to, bi, bo))
    r, t, ti, to, bi, bo = (np.concatenate(x) for x in zip(*parts))
    order = np.lexsort((t, ti, r))
    r, t, ti, to, bi, bo = r[order], t[order], ti[order], to[order], bi[order], bo[order]
    keep = _drop_shared_face_duplicates(r, t, ti, to)
    r, t, ti, to, bi, bo = r[keep], t[keep], ti[keep], to[keep], bi[keep], bo[keep]
    offsets = np.searchsorted(r, np.arange(n + 1)).astype(np.int64)
    return SegmentBatch(r.astype(np.int64), t.astype(np.int64), ti, to,
                        bi.reshape(-1, 4), bo.reshape(-1, 4), offsets)


def intersect_ray(mesh: TetMesh, ray: Ray, t_min: float = 0.0, t_max: float = np.inf) -> list[TetSegment]:
    if not t_min < t_max:
        raise ValueError("t_min must be smaller than t_max")
    batch = intersect_rays(mesh, ray.origin[None], ray.direction[None], t_min, t_max)
    return batch.segments_of(0)


# ---------------------------------------------------------------------------
# text formats


def save_mesh(path, mesh: TetMesh) -> None:
    lines = [f"tetmesh {mesh.n_vertices} {mesh.n_tets}"]
    lines += ["v {:.17g} {:.17g} {:.17g}".format(*p) for p in mesh.vertices]
    lines += ["t {} {} {} {}".format(*t) for t in mesh.tets]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _data_lines(path):
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line.split()


def load_mesh(path) -> TetMesh:
    rows = list(_data_lines(path))
    if not rows or rows[0][0] != "tetmesh" or len(rows[0]) != 3:
        raise MeshError(f"{path}: missing 'tetmesh <nv> <nt>' header")
    nv, nt = int(rows[0][1]), int(rows[0][2])
    body = rows[1:]
    if len(body) != nv + nt:
        raise MeshError(f"{path}: expected {nv + nt} records, found {len(body)}")
    try:
        verts = [[float(x) for x in r[1:4]] for r in body[:nv] if r[0] == "v" and len(r) == 4]
        tets = [[int(x) for x in r[1:5]] for r in body[nv:] if r[0] == "t" and len(r) == 5]
    except ValueError as exc:
        raise MeshError(f"{path}: {exc}") from None
    if len(verts) != nv or len(tets) != nt:
        raise MeshError(f"{path}: malformed vertex or tet records")
    return build_mesh(verts, tets)


def save_frames(path, frames: Sequence[np.ndarray]) -> None:
    with open(path, "w") as fh:
        for verts in frames:
            fh.write(f"frame {len(verts)}\n")
            for p in verts:
                fh.write("v {:.17g} {:.17g} {:.17g}\n".format(*p))


def load_frames(path) -> list[np.ndarray]:
    """Per-frame vertex blocks: ``frame <nv>`` followed by ``v x y z`` lines."""
    frames: list[np.ndarray] = []
    rows = list(_data_lines(path))
    i = 0
    while i < len(rows):
        if rows[i][0] != "frame" or len(rows[i]) != 2:
            raise MeshError(f"{path}: expected 'frame <nv>' at record {i}")
        nv = int(rows[i][1])
        block = rows[i + 1:i + 1 + nv]
        if len(block) != nv or any(r[0] != "v" or len(r) != 4 for r in block):
            raise MeshError(f"{path}: truncated frame block")
        frames.append(np.array([[float(x) for x in r[1:]] for r in block]))
        i += 1 + nv
    if not frames:
        raise MeshError(f"{path}: no frames")
    return frames

"""Procedural proxy meshes, analytic oracle scenes and their ground-truth
renders.

Oracle scenes are defined in world space by a density field and a colour
field; :func:`oracle_render` integrates them with dense fixed-step midpoint
quadrature along each ray, independent of any tet mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import TetMesh, build_mesh
from .model import ModelConfig
from .rendering import Camera, Image
from .training import TrainConfig


# ---------------------------------------------------------------------------
# meshes


def unit_tet() -> TetMesh:
    return build_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2, 3)])


def cube_star_mesh(half: float = 1.0, center=(0.0, 0.0, 0.0)) -> TetMesh:
    """24 tets: each cube face is fanned into 4 triangles around its centre and
    every triangle is coned to the cube centre."""
    c = np.asarray(center, dtype=float)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
    face_centres = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    verts = np.vstack([corners, face_centres, [[0, 0, 0]]]) * half + c
    body = len(verts) - 1
    tets = []
    for fi, n in enumerate(face_centres):
        axis = int(np.flatnonzero(n)[0])
        ring = [i for i in range(8) if corners[i, axis] == n[axis]]
        # order the 4 corners of this face cyclically
        others = [a for a in range(3) if a != axis]
        ang = [np.arctan2(corners[i, others[1]], corners[i, others[0]]) for i in ring]
        ring = [ring[k] for k in np.argsort(ang)]
        for k in range(4):
            tets.append((8 + fi, ring[k], ring[(k + 1) % 4], body))
    return build_mesh(verts, tets)


def box_mesh(lo=(0, 0, 0), hi=(1, 1, 1), n: int = 1) -> TetMesh:
    """Axis-aligned box split into ``n**3`` cubes of 6 tets each (Kuhn split)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    g = np.linspace(0, 1, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    verts = lo + np.stack([X, Y, Z], axis=-1).reshape(-1, 3) * (hi - lo)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    paths = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for path in paths:
                    p = [i, j, k]
                    chain = [vid(*p)]
                    for axis in path:
                        p[axis] += 1
                        chain.append(vid(*p))
                    tets.append(chain)
    return build_mesh(verts, tets)


def subdivide_tet(mesh: TetMesh, tet: int) -> tuple[TetMesh, np.ndarray, np.ndarray]:
    """Split one tet into 8 (4 corner tets + the inner octahedron cut along a diagonal).

    Returns ``(new_mesh, changed, old_of_new)`` where ``changed`` lists the new
    tet ids and ``old_of_new[k]`` is the old id of unchanged tet ``k`` (-1 for
    changed ones).  Neighbouring faces are left unsplit (hanging nodes).
    """
    v = [tuple(p) for p in mesh.vertices]
    a, b, c, d = (int(i) for i in mesh.tets[tet])
    mids = {}
    for i, j in [(a, b), (a, c), (a, d), (b, c), (b, d), (c, d)]:
        mids[(i, j)] = mids[(j, i)] = len(v)
        v.append(tuple(0.5 * (mesh.vertices[i] + mesh.vertices[j])))
    ab, ac, ad, bc, bd, cd = (mids[(a, b)], mids[(a, c)], mids[(a, d)], mids[(b, c)],
                              mids[(b, d)], mids[(c, d)])
    pieces = [(a, ab, ac, ad), (ab, b, bc, bd), (ac, bc, c, cd), (ad, bd, cd, d),
              (ab, ac, ad, bd), (ab, ac, bc, bd), (ac, ad, bd, cd), (ac, bc, bd, cd)]
    keep = [k for k in range(mesh.n_tets) if k != tet]
    tets = [tuple(mesh.tets[k]) for k in keep] + pieces
    new = build_mesh(np.array(v), tets)
    old_of_new = np.array(keep + [-1] * len(pieces), dtype=np.int64)
    changed = np.arange(len(keep), len(tets), dtype=np.int64)
    return new, changed, old_of_new


# ---------------------------------------------------------------------------
# oracle scenes


@dataclass
class OracleScene:
    density: Callable[[np.ndarray], np.ndarray]
    color: Callable[[np.ndarray], np.ndarray]
    mesh: TetMesh
    center: np.ndarray
    radius: float  # bounding sphere for quadrature

    def render(self, camera: Camera, quality: int = 512, background=(1.0, 1.0, 1.0)) -> Image:
        return oracle_render(self, camera, quality, background)


def homogeneous_sphere(radius: float = 0.5, sigma: float = 4.0, color=(0.8, 0.3, 0.1)) -> OracleScene:
    col = np.asarray(color, float)

    def density(p):
        return np.where(np.linalg.norm(p, axis=-1) <= radius, sigma, 0.0)

    def colour(p):
        return np.broadcast_to(col, p.shape).copy()

    return OracleScene(density, colour, cube_star_mesh(radius * 1.01), np.zeros(3), radius)


def fluff_ball(radius: float = 0.55, softness: float = 0.05, peak: float = 25.0,
               fluff: float = 0.08) -> OracleScene:
    """A soft ball with an angularly modulated 'fluff' shell and smooth colours."""

    def shell_radius(p):
        r = np.linalg.norm(p, axis=-1)
        u = p / np.maximum(r, 1e-12)[..., None]
        bumps = (np.sin(3.0 * u[..., 0] + 1.0) * np.cos(2.0 * u[..., 1])
                 + 0.5 * np.sin(4.0 * u[..., 2] + 0.5 * u[..., 0]))
        return r, radius * (1.0 + fluff * bumps)

    def density(p):
        r, rs = shell_radius(p)
        return peak / (1.0 + np.exp((r - rs) / softness))

    def colour(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        red = 0.55 + 0.35 * np.sin(2.5 * x + 0.3)
        green = 0.45 + 0.3 * np.cos(2.0 * y - 0.4 * z)
        blue = 0.4 + 0.3 * np.sin(1.5 * z + 2.0 * x)
        return np.stack([red, green, blue], axis=-1)

    return OracleScene(density, colour, cube_star_mesh(1.0), np.zeros(3), float(np.sqrt(3.0)))


def oracle_render_rays(scene: OracleScene, origins, dirs, quality: int = 512,
                       background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Midpoint quadrature of the analytic fields over the bounding-sphere chord."""
    o = np.atleast_2d(np.asarray(origins, float)) - scene.center
    d = np.atleast_2d(np.asarray(dirs, float))
    bg = np.asarray(background, float)
    b = np.einsum("ij,ij->i", o, d)
    disc = b * b - (np.einsum("ij,ij->i", o, o) - scene.radius**2)
    hit = disc > 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t0 = np.maximum(-b - root, 0.0)
    t1 = -b + root
    hit &= t1 > t0
    out = np.broadcast_to(bg, (len(o), 3)).copy()
    rows = np.flatnonzero(hit)
    chunk = max(1, 2_000_000 // quality)
    for s in range(0, len(rows), chunk):
        r = rows[s:s + chunk]
        dt = (t1[r] - t0[r]) / quality
        tm = t0[r, None] + (np.arange(quality) + 0.5)[None] * dt[:, None]
        p = o[r, None, :] + tm[..., None] * d[r, None, :]
        tau = scene.density(p + scene.center) * dt[:, None]
        col = scene.color(p + scene.center)
        T = np.exp(-(np.cumsum(tau, axis=1) - tau))
        w = T * -np.expm1(-tau)
        out[r] = np.einsum("rs,rsk->rk", w, col) + np.exp(-tau.sum(axis=1))[:, None] * bg
    return out


def oracle_render(scene: OracleScene, camera: Camera, quality: int = 512,
                  background=(1.0, 1.0, 1.0)) -> Image:
    if quality < 512:
        raise ValueError("oracle quadrature needs at least 512 steps per ray")
    o, d = camera.rays()
    rgb = oracle_render_rays(scene, o, d, quality, background)
    return Image(np.clip(rgb, 0.0, 1.0).reshape(camera.height, camera.width, 3))


# ---------------------------------------------------------------------------
# camera rigs


def orbit_cameras(n: int, distance: float = 3.0, size: int = 64, fov_deg: float = 40.0,
                  elevation_deg: float = 20.0, phase_deg: float = 0.0, alternate: bool = True,
                  target=(0.0, 0.0, 0.0)) -> list[Camera]:
    """Cameras on a circle around ``target`` (elevation alternates sign if asked)."""
    focal = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
    cams = []
    for k in range(n):
        az = np.radians(phase_deg + 360.0 * k / n)
        el = np.radians(elevation_deg * (-1) ** k if alternate else elevation_deg)
        eye = np.asarray(target) + distance * np.array(
            [np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
        cams.append(Camera.look_at(eye, target, (0, 1, 0), focal, size, size))
    return cams


def toy_cameras(n_views: int = 8, size: int = 64, n_heldout: int = 4):
    """Training orbit plus held-out views at unseen azimuths and elevation."""
    train_cams = orbit_cameras(n_views, size=size, elevation_deg=25.0)
    test_cams = orbit_cameras(n_heldout, size=size, elevation_deg=10.0,
                              phase_deg=180.0 / n_views + 7.0, alternate=True)
    return train_cams, test_cams


def toy_dataset(n_views: int = 8, size: int = 64, n_heldout: int = 4, quality: int = 512,
                scene: OracleScene | None = None):
    """Fluff-ball (or given scene) training views plus held-out views."""
    scene = scene or fluff_ball()
    train_cams, test_cams = toy_cameras(n_views, size, n_heldout)
    train = [(c, oracle_render(scene, c, quality)) for c in train_cams]
    test = [(c, oracle_render(scene, c, quality)) for c in test_cams]
    return scene, train, test


# ---------------------------------------------------------------------------
# desk-scale defaults for the toy scene

TOY_MODEL = ModelConfig(log2_size=14, levels=4, features=2, sh_degree=1, max_res=8)
TOY_RENDER_MODE = "decode_first"
TOY_TRAIN = TrainConfig(batch_size=1024, steps=5000)

"""Procedural fixture meshes: a flat grid, an icosphere and a synthetic face patch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import LipLandmarkSet, Mesh, VertexMask


def _grid_faces(nx: int, ny: int) -> np.ndarray:
    idx = np.arange(nx * ny).reshape(ny, nx)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    return np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])


def plane_grid(nx: int = 11, ny: int | None = None, spacing: float = 1.0) -> Mesh:
    """Flat ``nx`` x ``ny`` vertex grid in the z=0 plane, counter-clockwise faces."""
    ny = nx if ny is None else ny
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    v = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], 1)
    return Mesh(v, _grid_faces(nx, ny))


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
         (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.asarray(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(np.asarray(verts) * radius, np.asarray(faces))


@dataclass(frozen=True)
class SyntheticHead:
    """Face-like open patch plus the annotations shipped with it."""

    mesh: Mesh
    lips: LipLandmarkSet
    mouth: VertexMask
    upper_face: VertexMask
    mouth_y: float
    lip_gap: float


HEAD_WIDTH = 140.0   # mm, x extent
HEAD_HEIGHT = 180.0  # mm, y extent
MOUTH_Y = -45.0


def _dome(x, y):
    return 35.0 * np.exp(-(x / 55.0) ** 2 - (y / 75.0) ** 2)


def synthetic_head(nx: int = 29, ny: int = 37) -> SyntheticHead:
    """Open dome-shaped face patch in millimetres with mouth and lip annotations.

    The patch spans 140 x 180 mm. Lip landmarks are the grid vertices closest
    to three points on each side of a horizontal mouth line at y = -45 mm.
    ``nx=71, ny=71`` gives a 5041-vertex head.
    """
    xs = np.linspace(-HEAD_WIDTH / 2, HEAD_WIDTH / 2, nx)
    ys = np.linspace(-HEAD_HEIGHT / 2, HEAD_HEIGHT / 2, ny)
    gx, gy = np.meshgrid(xs, ys)
    v = np.stack([gx.ravel(), gy.ravel(), _dome(gx.ravel(), gy.ravel())], 1)
    mesh = Mesh(v, _grid_faces(nx, ny))

    dy = ys[1] - ys[0]
    # nearest grid rows strictly above and below the mouth line
    row_up = int(np.searchsorted(ys, MOUTH_Y, side="right"))
    row_lo = row_up - 1
    if ys[row_up] - MOUTH_Y < 0.25 * dy:
        row_up += 1
    if MOUTH_Y - ys[row_lo] < 0.25 * dy:
        row_lo -= 1
    cols = [int(np.argmin(np.abs(xs - x0))) for x0 in (-15.0, 0.0, 15.0)]
    if len(set(cols)) < 3:
        raise ValueError("grid too coarse for three distinct lip columns")
    upper = tuple(row_up * nx + c for c in cols)
    lower = tuple(row_lo * nx + c for c in cols)
    lips = LipLandmarkSet(upper, lower, mesh.n_vertices)

    x, y = v[:, 0], v[:, 1]
    mouth = np.flatnonzero((np.abs(x) <= 30.0) & (np.abs(y - MOUTH_Y) <= 15.0))
    upper_face = np.flatnonzero(y >= 10.0)
    return SyntheticHead(
        mesh=mesh,
        lips=lips,
        mouth=VertexMask(mouth, "mouth", mesh.n_vertices),
        upper_face=VertexMask(upper_face, "upper_face", mesh.n_vertices),
        mouth_y=MOUTH_Y,
        lip_gap=float(ys[row_up] - ys[row_lo]),
    )

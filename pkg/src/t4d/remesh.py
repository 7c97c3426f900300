"""Random remeshing: partial midpoint subdivision followed by edge-collapse decimation.

Used to turn one topology into many, so that unregistered metrics and losses
can be exercised on data with per-frame connectivity.
"""
from __future__ import annotations

import heapq
import math
import warnings

import numpy as np

from .mesh import Mesh

DEFAULT_UP = 0.3
DEFAULT_DOWN = 0.8
JITTER = 0.25
_MIN_NORMAL_DOT = 0.2


def subdivide_faces(mesh: Mesh, selected) -> Mesh:
    """Split ``selected`` faces 1-to-4 at edge midpoints, keeping the mesh conforming.

    Neighbours that share a split edge are bisected (one split edge) or split
    in three (two split edges), so no hanging vertices are created.
    """
    v = mesh.vertices
    f = mesh.faces
    selected = np.asarray(selected, dtype=np.int64)
    if len(selected) == 0:
        return mesh
    split = set()
    for a, b, c in f[selected].tolist():
        split.update({(min(a, b), max(a, b)), (min(b, c), max(b, c)), (min(c, a), max(c, a))})
    mids = {}
    new_v = [v]
    nxt = len(v)
    for e in sorted(split):
        mids[e] = nxt
        new_v.append(((v[e[0]] + v[e[1]]) / 2.0)[None])
        nxt += 1

    def m(a, b):
        return mids.get((min(a, b), max(a, b)))

    out = []
    for tri in f.tolist():
        flags = [m(tri[i], tri[(i + 1) % 3]) is not None for i in range(3)]
        k = sum(flags)
        if k == 0:
            out.append(tri)
            continue
        if k == 3:
            a, b, c = tri
            ab, bc, ca = m(a, b), m(b, c), m(c, a)
            out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
            continue
        # rotate so the pattern is canonical: k=1 -> edge (v0,v1) split;
        # k=2 -> edge (v2,v0) is the unsplit one
        for r in range(3):
            rot = tri[r:] + tri[:r]
            fl = flags[r:] + flags[:r]
            if (k == 1 and fl[0]) or (k == 2 and not fl[2]):
                break
        a, b, c = rot
        if k == 1:
            ab = m(a, b)
            out += [[a, ab, c], [ab, b, c]]
        else:
            ab, bc = m(a, b), m(b, c)
            out += [[ab, b, bc], [a, ab, bc], [a, bc, c]]
    return Mesh(np.concatenate(new_v), np.asarray(out))


class _Decimator:
    def __init__(self, mesh: Mesh, rng: np.random.Generator):
        self.pos = mesh.vertices.copy()
        self.faces = [list(t) for t in mesh.faces.tolist()]
        self.vf = [set() for _ in range(len(self.pos))]
        for fi, t in enumerate(self.faces):
            for x in t:
                self.vf[x].add(fi)
        self.alive = np.ones(len(self.pos), dtype=bool)
        self.alive[[i for i, s in enumerate(self.vf) if not s]] = False
        self.n_alive = int(self.alive.sum())
        self.rng = rng
        self.heap = []
        edges = set()
        for t in self.faces:
            for i in range(3):
                a, b = t[i], t[(i + 1) % 3]
                edges.add((min(a, b), max(a, b)))
        for a, b in sorted(edges):
            self._push(a, b)

    def _len(self, a, b):
        return math.dist(self.pos[a], self.pos[b])

    def _push(self, a, b):
        key = self._len(a, b) * (1.0 + JITTER * self.rng.random())
        heapq.heappush(self.heap, (key, min(a, b), max(a, b)))

    def _nbrs(self, v):
        out = set()
        for fi in self.vf[v]:
            out.update(self.faces[fi])
        out.discard(v)
        return out

    def _edge_faces(self, a, b):
        return [fi for fi in self.vf[a] if b in self.faces[fi]]

    def _is_boundary_vertex(self, v):
        for u in self._nbrs(v):
            if len(self._edge_faces(v, u)) == 1:
                return True
        return False

    def try_collapse(self, a, b) -> bool:
        ef = self._edge_faces(a, b)
        if not ef:
            return False
        na, nb = self._nbrs(a), self._nbrs(b)
        opposite = {x for fi in ef for x in self.faces[fi] if x not in (a, b)}
        if (na & nb) != opposite:
            return False
        ba, bb = self._is_boundary_vertex(a), self._is_boundary_vertex(b)
        boundary_edge = len(ef) == 1
        if ba and bb and not boundary_edge:
            return False
        if boundary_edge and len(na | nb) <= 3:
            return False
        if ba and not bb:
            target = self.pos[a].copy()
        elif bb and not ba:
            target = self.pos[b].copy()
        else:
            target = 0.5 * (self.pos[a] + self.pos[b])
        efs = set(ef)
        # geometric check on the faces that survive around a and b
        ring = [self.faces[fi] for fi in (self.vf[a] | self.vf[b]) - efs]
        if ring:
            tri = np.asarray(ring)
            old = self.pos[tri]
            moved = old.copy()
            moved[(tri == a) | (tri == b)] = target
            no = np.cross(old[:, 1] - old[:, 0], old[:, 2] - old[:, 0])
            nn = np.cross(moved[:, 1] - moved[:, 0], moved[:, 2] - moved[:, 0])
            ln, lo = np.linalg.norm(nn, axis=1), np.linalg.norm(no, axis=1)
            if np.any(ln <= 2e-12) or np.any(ln < 1e-6 * lo):
                return False
            if np.any(np.einsum("ij,ij->i", nn, no) < _MIN_NORMAL_DOT * ln * lo):
                return False
        # commit: b merges into a
        self.pos[a] = target
        for fi in list(efs):
            for x in self.faces[fi]:
                self.vf[x].discard(fi)
            self.faces[fi] = None
        for fi in list(self.vf[b]):
            t = self.faces[fi]
            t[t.index(b)] = a
            self.vf[a].add(fi)
        self.vf[b] = set()
        self.alive[b] = False
        self.n_alive -= 1
        for u in self._nbrs(a):
            self._push(a, u)
        return True

    def run(self, target: int) -> None:
        while self.n_alive > target and self.heap:
            key, a, b = heapq.heappop(self.heap)
            if not (self.alive[a] and self.alive[b]):
                continue
            if not self._edge_faces(a, b):
                continue
            self.try_collapse(a, b)

    def mesh(self) -> Mesh:
        faces = np.asarray([t for t in self.faces if t is not None], dtype=np.int64)
        keep = np.flatnonzero(self.alive)
        remap = -np.ones(len(self.pos), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        return Mesh(self.pos[keep], remap[faces])


def decimate(mesh: Mesh, target_vertices: int, seed: int = 0) -> Mesh:
    """Collapse shortest edges (with seeded jitter) until ``target_vertices`` remain.

    Collapses that would break the link condition, fold a face or leave a
    degenerate one are skipped. When no legal collapse is left the best
    result so far is returned with a warning.
    """
    rng = np.random.default_rng(seed)
    dec = _Decimator(mesh, rng)
    dec.run(max(int(target_vertices), 4))
    if dec.n_alive > target_vertices:
        warnings.warn(
            f"decimation stopped at {dec.n_alive} vertices (target {target_vertices}): "
            "no legal collapse left", RuntimeWarning, stacklevel=2)
    return dec.mesh()


def remesh_random(mesh: Mesh, up_fraction: float = DEFAULT_UP,
                  down_target_ratio: float = DEFAULT_DOWN, seed: int = 0) -> Mesh:
    """Randomly subdivide a fraction of faces, then decimate to a vertex budget.

    The budget is ``down_target_ratio`` times the original vertex count. The
    result depends only on the inputs and ``seed``.
    """
    if not 0.0 <= up_fraction <= 1.0:
        raise ValueError(f"up_fraction must be in [0, 1], got {up_fraction}")
    if not 0.0 < down_target_ratio <= 1.0:
        raise ValueError(f"down_target_ratio must be in (0, 1], got {down_target_ratio}")
    rng = np.random.default_rng(seed)
    n_sel = int(round(up_fraction * mesh.n_faces))
    sel = np.sort(rng.choice(mesh.n_faces, size=n_sel, replace=False)) if n_sel else []
    up = subdivide_faces(mesh, sel)
    target = int(np.floor(down_target_ratio * mesh.n_vertices))
    if up.n_vertices <= target:
        return up
    return decimate(up, target, seed=int(rng.integers(2 ** 31)))

"""Correspondence-based rigid (optionally scaled) alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshError, MeshSequence, TopologyError


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0
    residual: float = 0.0  # sum of squared distances after alignment, mm^2

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls(np.eye(3), np.zeros(3))


def procrustes(source, target, with_scale: bool = False) -> SimilarityTransform:
    """Least-squares ``s R x + t ~ y`` with ``R`` a proper rotation (Umeyama).

    Reflections are never returned: when the best orthogonal map is a
    reflection the last singular direction is flipped instead.
    """
    x = np.asarray(source, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise TopologyError(f"point sets must match in shape, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise MeshError("alignment needs at least 3 points")
    mx, my = x.mean(0), y.mean(0)
    xc, yc = x - mx, y - my
    sv = np.linalg.svd(xc, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise MeshError("degenerate configuration: source points are collinear")
    cov = yc.T @ xc / len(x)
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = (u * d) @ vt
    scale = 1.0
    if with_scale:
        var_x = np.mean(np.sum(xc ** 2, axis=1))
        scale = float(np.dot(s, d) / var_x)
    t = my - scale * rot @ mx
    res = float(np.sum((scale * x @ rot.T + t - y) ** 2))
    return SimilarityTransform(rot, t, scale, res)


def align_rigid(source: Mesh, target: Mesh, with_scale: bool = False):
    """Align ``source`` onto ``target`` (same topology); returns (mesh, transform)."""
    if source.n_vertices != target.n_vertices:
        raise TopologyError(
            f"alignment needs shared topology: V={source.n_vertices} vs V={target.n_vertices}")
    tr = procrustes(source.vertices, target.vertices, with_scale)
    return source.with_vertices(tr.apply(source.vertices)), tr


def align_sequence(seq: MeshSequence, reference: Mesh, with_scale: bool = False):
    """Apply one transform, estimated on the neutral (else first) frame, to every frame.

    Returns ``(aligned_sequence, transform)``.
    """
    if not seq.is_homogeneous:
        raise TopologyError("sequence alignment needs a homogeneous sequence")
    anchor = seq.neutral if seq.neutral is not None else seq.frames[0]
    _, tr = align_rigid(anchor, reference, with_scale)
    frames = tuple(m.with_vertices(tr.apply(m.vertices)) for m in seq.frames)
    neutral = None if seq.neutral is None else seq.neutral.with_vertices(tr.apply(seq.neutral.vertices))
    return MeshSequence(frames, fps=seq.fps, neutral=neutral), tr


def rotation_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle (rad) between two rotations."""
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    # arccos is ill-conditioned near 0; use the skew part as well
    skew = r1.T @ r2 - r2.T @ r1
    s = np.linalg.norm([skew[2, 1], skew[0, 2], skew[1, 0]]) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))

"""Registered training losses and the (dynamic) Chamfer distance, forward only.

Every loss is a true mean over the terms it sums: T frames and V vertices for
the position losses, T-1 frame pairs for the motion losses.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import MeshSequence, VertexMask, require_registered_pair

ZERO_MOTION_TOL = 1e-9  # mm; shorter displacements carry no direction


def displacement_field(seq: MeshSequence) -> np.ndarray:
    """Frame-to-frame vertex displacements, shape (T-1, V, 3)."""
    return np.diff(seq.positions(), axis=0)


def _pair(gt, pred):
    require_registered_pair(gt, pred)
    return gt.positions(), pred.positions()


def loss_mse(gt: MeshSequence, pred: MeshSequence) -> float:
    a, b = _pair(gt, pred)
    return float(np.mean(np.sum((a - b) ** 2, axis=-1)))


def loss_masked_mse(gt: MeshSequence, pred: MeshSequence, mask: VertexMask) -> float:
    """Squared error on mask vertices only, still divided by the full vertex count."""
    a, b = _pair(gt, pred)
    mask.check(a.shape[1])
    sq = np.sum((a - b) ** 2, axis=-1)
    return float(np.mean(sq * mask.weights()[None, :]))


def _motion_pair(gt, pred):
    a, b = _pair(gt, pred)
    if len(a) < 2:
        raise ValueError("motion losses need at least 2 frames")
    return np.diff(a, axis=0), np.diff(b, axis=0)


def loss_velocity(gt: MeshSequence, pred: MeshSequence) -> float:
    d, dh = _motion_pair(gt, pred)
    return float(np.mean(np.sum((d - dh) ** 2, axis=-1)))


def cosine_distance(d: np.ndarray, dh: np.ndarray, tol: float = ZERO_MOTION_TOL) -> np.ndarray:
    """Elementwise ``1 - cos`` over the last axis; 0 where either vector is shorter than ``tol``."""
    nd = np.linalg.norm(d, axis=-1)
    nh = np.linalg.norm(dh, axis=-1)
    ok = (nd >= tol) & (nh >= tol)
    dot = np.sum(d * dh, axis=-1)
    denom = np.where(ok, nd * nh, 1.0)
    cos = np.clip(dot / denom, -1.0, 1.0)
    return np.where(ok, 1.0 - cos, 0.0)


def loss_cosine(gt: MeshSequence, pred: MeshSequence) -> float:
    d, dh = _motion_pair(gt, pred)
    return float(np.mean(cosine_distance(d, dh)))


def nn_sq_dists(src, dst, tree: cKDTree | None = None) -> np.ndarray:
    """Squared distance from every point of ``src`` to its nearest point of ``dst``."""
    if tree is None:
        tree = cKDTree(dst)
    dist, _ = tree.query(src, k=1)
    return dist ** 2


def _points(x):
    x = np.asarray(getattr(x, "vertices", x), dtype=np.float64).reshape(-1, 3)
    if len(x) == 0:
        raise ValueError("point set is empty")
    return x


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: mean squared NN distance both ways, summed (mm^2).

    Accepts point arrays (N, 3) or meshes (their vertices are used).
    """
    a, b = _points(a), _points(b)
    ab = nn_sq_dists(a, b)  # each a_k to nearest b
    ba = nn_sq_dists(b, a)
    return float(ba.mean() + ab.mean())


def dynamic_chamfer(gt: MeshSequence, pred: MeshSequence) -> float:
    """Per-frame Chamfer averaged over the sequence; topologies may differ."""
    if len(gt) != len(pred):
        raise ValueError(f"sequence length mismatch: {len(gt)} vs {len(pred)}")
    vals = [chamfer(g, p) for g, p in zip(gt.frames, pred.frames)]
    return float(np.mean(vals))

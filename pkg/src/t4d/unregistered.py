"""Topology-free shape distances: vertex Hausdorff, Chamfer and the unoriented varifold metric."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .losses import _points, chamfer
from .mesh import ZERO_AREA_TOL, Mesh, MeshSequence
from .report import MetricReport

DEFAULT_SIGMA = 0.1
TRUNCATION_RADIUS = 4.0  # in units of sigma
_BLOCK = 512


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two vertex sets (mm)."""
    a, b = _points(a), _points(b)
    dab, _ = cKDTree(b).query(a, k=1)
    dba, _ = cKDTree(a).query(b, k=1)
    return float(max(dab.max(), dba.max()))


@dataclass(frozen=True, eq=False)
class VarifoldRep:
    centers: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.areas)


def varifold_rep(mesh: Mesh) -> VarifoldRep:
    """Per-face barycenters, areas and unit normals; zero-area faces are dropped."""
    v, f = mesh.vertices, mesh.faces
    cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(cr, axis=1)
    area = 0.5 * norm
    keep = area > ZERO_AREA_TOL
    dropped = int((~keep).sum())
    if not keep.any():
        raise ValueError("every face of the mesh is degenerate")
    if dropped:
        warnings.warn(f"varifold: dropped {dropped} zero-area face(s)", RuntimeWarning, stacklevel=2)
    centers = v[f[keep]].mean(axis=1)
    normals = cr[keep] / norm[keep, None]
    return VarifoldRep(centers, area[keep], normals, dropped)


def varifold_inner(x: VarifoldRep, y: VarifoldRep, sigma: float,
                   truncate: bool = False) -> float:
    """Kernel inner product with a Gaussian position kernel and squared-cosine normal kernel.

    With ``truncate`` only face pairs closer than ``4 sigma`` are summed.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if len(x) == 0 or len(y) == 0:
        raise ValueError("empty varifold")
    s2 = sigma * sigma
    if truncate:
        tx, ty = cKDTree(x.centers), cKDTree(y.centers)
        pairs = tx.sparse_distance_matrix(ty, TRUNCATION_RADIUS * sigma, output_type="ndarray")
        i, j, d = pairs["i"], pairs["j"], pairs["v"]
        kn = np.einsum("ij,ij->i", x.normals[i], y.normals[j]) ** 2
        return float(np.sum(x.areas[i] * y.areas[j] * np.exp(-d * d / s2) * kn))
    total = 0.0
    for start in range(0, len(x), _BLOCK):
        sl = slice(start, start + _BLOCK)
        cx = x.centers[sl]
        d2 = np.zeros((len(cx), len(y)))
        for c in range(3):
            d2 += (cx[:, c, None] - y.centers[None, :, c]) ** 2
        kn = (x.normals[sl] @ y.normals.T) ** 2
        total += float(x.areas[sl] @ (np.exp(-d2 / s2) * kn) @ y.areas)
    return total


def varifold_metric(x: VarifoldRep, y: VarifoldRep, sigma: float = DEFAULT_SIGMA,
                    truncate: bool = False) -> float:
    """Squared kernel distance <X,X> + <Y,Y> - 2<X,Y>."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    xx = varifold_inner(x, x, sigma, truncate)
    yy = varifold_inner(y, y, sigma, truncate)
    xy = varifold_inner(x, y, sigma, truncate)
    return xx + yy - 2.0 * xy


def frame_distances(gt: Mesh, pred: Mesh, sigma: float = DEFAULT_SIGMA,
                    truncate: bool = True) -> dict:
    return {
        "hd": hausdorff(gt, pred),
        "cd": chamfer(gt, pred),
        "varifold": varifold_metric(varifold_rep(gt), varifold_rep(pred), sigma, truncate),
    }


def unregistered_metrics(gt: MeshSequence, pred: MeshSequence, sigma: float = DEFAULT_SIGMA,
                         truncate: bool = True, jobs: int = 1) -> tuple[dict, dict]:
    """Frame-averaged HD, CD and varifold distance plus the per-frame values."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if len(gt) != len(pred):
        raise ValueError(f"sequence length mismatch: {len(gt)} vs {len(pred)}")

    def one(i):
        return frame_distances(gt.frames[i], pred.frames[i], sigma, truncate)

    idx = range(len(gt))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            rows = list(ex.map(one, idx))
    else:
        rows = [one(i) for i in idx]
    per_frame = {k: [r[k] for r in rows] for k in ("hd", "cd", "varifold")}
    means = {k: float(np.mean(v)) for k, v in per_frame.items()}
    return means, per_frame


def evaluate_unregistered(gt: MeshSequence, pred: MeshSequence, sigma: float = DEFAULT_SIGMA,
                          truncate: bool = True, jobs: int = 1,
                          sequence_id: str = "sequence") -> MetricReport:
    means, per_frame = unregistered_metrics(gt, pred, sigma, truncate, jobs)
    return MetricReport(
        entries=[{"sequence_id": sequence_id, "mode": "unregistered",
                  "metrics": means, "per_frame": per_frame}],
        metadata={"mode": "unregistered",
                  "conventions": unregistered_conventions(sigma, truncate)},
    )


def unregistered_conventions(sigma: float, truncate: bool) -> dict:
    return {
        "sigma": sigma,
        "varifold_truncation": TRUNCATION_RADIUS if truncate else None,
        "hausdorff": "vertex_sets",
        "frame_aggregation": "mean",
        "position_kernel": "exp(-|x-y|^2/sigma^2)",
        "normal_kernel": "<n,m>^2",
    }

"""Metrics for sequences that share one topology.

Geometric metrics (LVE, MVE, FDD) compare whole frames. Dynamic metrics (DTW,
discrete Frechet, displacement magnitude and cosine errors) compare the 3D
trajectories of six tracked lip vertices.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.spatial.distance import cdist

from .losses import ZERO_MOTION_TOL, cosine_distance
from .mesh import LipLandmarkSet, MeshSequence, TopologyError, VertexMask, require_registered_pair
from .report import MetricReport

REGISTERED_METRICS = ("lve", "mve", "fdd", "fdd_abs", "dtw", "dfd", "delta_m", "delta_cd")


@dataclass(frozen=True)
class TrajectorySet:
    """(6, T, 3) lip trajectories, upper landmarks first then lower."""

    points: np.ndarray
    indices: tuple[int, ...]

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[1] < 1:
            raise ValueError(f"trajectories must be (n, T>=1, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite trajectory coordinate")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i) -> np.ndarray:
        return self.points[i]


def extract_trajectories(seq: MeshSequence, lips: LipLandmarkSet) -> TrajectorySet:
    if not seq.is_homogeneous:
        raise TopologyError("trajectories need a homogeneous sequence")
    lips.check(seq.frames[0].n_vertices)
    idx = list(lips.indices)
    pos = seq.positions()[:, idx, :]  # (T, 6, 3)
    return TrajectorySet(np.transpose(pos, (1, 0, 2)), tuple(idx))


def _traj(p, name="trajectory"):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if len(p) == 0:
        raise ValueError(f"{name} is empty")
    return p


def dtw(p, q, band: int | None = None) -> float:
    """Dynamic time warping distance: sqrt of the cheapest warping-path sum of squared distances.

    Steps are (1, 0), (0, 1) and (1, 1) from the first pair to the last.
    ``band`` restricts ``|i - j|`` (widened to ``|n - m|`` so a path always exists).
    """
    p, q = _traj(p, "P"), _traj(q, "Q")
    cost = cdist(p, q, "sqeuclidean")
    n, m = cost.shape
    w = None if band is None else max(int(band), abs(n - m))
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        lo, hi = 1, m
        if w is not None:
            lo, hi = max(1, i - w), min(m, i + w)
        row, prev = acc[i], acc[i - 1]
        c = cost[i - 1]
        for j in range(lo, hi + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = c[j - 1] + best
    return float(np.sqrt(acc[n, m]))


def frechet(p, q) -> float:
    """Discrete Frechet distance (Eiter-Mannila coupling recursion)."""
    p, q = _traj(p, "P"), _traj(q, "Q")
    d = cdist(p, q)
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0, 0] = d[0, 0]
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[-1, -1])


def _steps(p, q):
    p, q = _traj(p, "P"), _traj(q, "Q")
    if p.shape != q.shape:
        raise ValueError(f"trajectory length mismatch: {p.shape} vs {q.shape}")
    if len(p) < 2:
        raise ValueError("displacement metrics need at least 2 points")
    return np.diff(p, axis=0), np.diff(q, axis=0)


def delta_m(p, q) -> float:
    """Mean squared difference of per-step displacement vectors (mm^2)."""
    dp, dq = _steps(p, q)
    return float(np.mean(np.sum((dp - dq) ** 2, axis=-1)))


def delta_cd(p, q, tol: float = ZERO_MOTION_TOL) -> float:
    """Mean cosine distance between per-step displacements; zero-length steps add 0."""
    dp, dq = _steps(p, q)
    return float(np.mean(cosine_distance(dp, dq, tol)))


def _frame_reduce(per_frame: np.ndarray, how: str) -> float:
    if how == "mean":
        return float(per_frame.mean())
    if how == "max":
        return float(per_frame.max())
    raise ValueError(f"unknown frame reduction '{how}'")


def lve(gt: MeshSequence, pred: MeshSequence, mouth: VertexMask, frames: str = "mean") -> float:
    """Lip vertex error: per frame the largest squared error over mouth vertices,
    then reduced over frames (``"mean"`` by default, or ``"max"``)."""
    require_registered_pair(gt, pred)
    mouth.check(gt.frames[0].n_vertices)
    if len(mouth) == 0:
        raise ValueError("LVE needs a non-empty mouth mask")
    idx = mouth.indices
    sq = np.sum((gt.positions()[:, idx] - pred.positions()[:, idx]) ** 2, axis=-1)
    return _frame_reduce(sq.max(axis=1), frames)


def mve(gt: MeshSequence, pred: MeshSequence, frames: str = "max") -> float:
    """Mean vertex error: per-frame mean squared error, then max over frames by default."""
    require_registered_pair(gt, pred)
    sq = np.sum((gt.positions() - pred.positions()) ** 2, axis=-1)
    return _frame_reduce(sq.mean(axis=1), frames)


def face_dynamics(positions: np.ndarray) -> np.ndarray:
    """Population std over time of each vertex's distance from its first-frame position."""
    dist = np.linalg.norm(positions - positions[:1], axis=-1)  # (T, V)
    return dist.std(axis=0)


def fdd(gt: MeshSequence, pred: MeshSequence, upper: VertexMask) -> float:
    """Signed upper-face dynamics deviation: mean of dyn_gt - dyn_pred over the mask."""
    require_registered_pair(gt, pred)
    upper.check(gt.frames[0].n_vertices)
    if len(upper) == 0:
        raise ValueError("FDD needs a non-empty upper-face mask")
    if len(gt) < 2:
        raise ValueError("FDD needs at least 2 frames")
    idx = upper.indices
    dg = face_dynamics(gt.positions()[:, idx])
    dp = face_dynamics(pred.positions()[:, idx])
    return float(np.mean(dg - dp))


@dataclass(frozen=True)
class RegisteredConventions:
    """Switchable reductions; recorded verbatim in report metadata."""

    lve_frames: str = "mean"
    mve_frames: str = "max"
    dtw_band: int | None = None
    fdd_reference: str = "first_frame"
    fdd_std: str = "population"
    trajectory_aggregation: str = "mean"
    zero_motion_tol: float = ZERO_MOTION_TOL

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RegisteredConventions:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def trajectory_metrics(gt_traj: TrajectorySet, pred_traj: TrajectorySet,
                       conv: RegisteredConventions = RegisteredConventions()) -> dict:
    """DTW, DFD, delta_M and delta_Cd averaged over the landmark trajectories."""
    if gt_traj.points.shape != pred_traj.points.shape:
        raise ValueError("trajectory sets differ in shape")
    n = len(gt_traj)
    out = {"dtw": [], "dfd": [], "delta_m": [], "delta_cd": []}
    for i in range(n):
        p, q = gt_traj[i], pred_traj[i]
        out["dtw"].append(dtw(p, q, conv.dtw_band))
        out["dfd"].append(frechet(p, q))
        if len(p) >= 2:
            out["delta_m"].append(delta_m(p, q))
            out["delta_cd"].append(delta_cd(p, q, conv.zero_motion_tol))
    if conv.trajectory_aggregation != "mean":
        raise ValueError(f"unknown trajectory aggregation '{conv.trajectory_aggregation}'")
    return {k: float(np.mean(v)) for k, v in out.items() if v}


def registered_metrics(gt: MeshSequence, pred: MeshSequence, mouth: VertexMask,
                       upper: VertexMask, lips: LipLandmarkSet,
                       conv: RegisteredConventions = RegisteredConventions()) -> dict:
    """All registered metrics for one sequence pair as a plain dict of floats."""
    require_registered_pair(gt, pred)
    if conv.fdd_reference != "first_frame" or conv.fdd_std != "population":
        raise ValueError("only first-frame / population-std FDD is implemented")
    f = fdd(gt, pred, upper)
    res = {
        "lve": lve(gt, pred, mouth, conv.lve_frames),
        "mve": mve(gt, pred, conv.mve_frames),
        "fdd": f,
        "fdd_abs": abs(f),
    }
    res.update(trajectory_metrics(extract_trajectories(gt, lips),
                                  extract_trajectories(pred, lips), conv))
    return res


def evaluate_registered(gt: MeshSequence, pred: MeshSequence, mouth: VertexMask,
                        upper: VertexMask, lips: LipLandmarkSet,
                        conv: RegisteredConventions = RegisteredConventions(),
                        sequence_id: str = "sequence") -> MetricReport:
    values = registered_metrics(gt, pred, mouth, upper, lips, conv)
    return MetricReport(
        entries=[{"sequence_id": sequence_id, "mode": "registered", "metrics": values}],
        metadata={
            "mode": "registered",
            "conventions": conv.to_dict(),
            "masks": {"mouth": {"label": mouth.label, "size": len(mouth)},
                      "upper_face": {"label": upper.label, "size": len(upper)},
                      "lips": {"upper": list(lips.upper), "lower": list(lips.lower)}},
        },
    )

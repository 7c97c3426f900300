"""Classical (Torgerson) multidimensional scaling."""
from __future__ import annotations

import numpy as np


def mds_project(distances, dims: int = 2, tol: float = 1e-10) -> np.ndarray:
    """Embed a distance matrix into ``dims`` dimensions.

    Double-centres ``-D**2 / 2``, keeps the top ``dims`` eigenpairs and scales
    the eigenvectors by the square roots of the (non-negative clamped)
    eigenvalues. An all-zero matrix maps every point to the origin.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    n = len(d)
    if not 1 <= dims <= n:
        raise ValueError(f"dims must be in [1, {n}]")
    scale = max(float(np.abs(d).max()), 1.0)
    if not np.allclose(d, d.T, rtol=0, atol=1e-12 * scale):
        raise ValueError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(d)) > 1e-12 * scale):
        raise ValueError("distance matrix must have a zero diagonal")
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    if not d.any():
        return np.zeros((n, dims))
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (d ** 2) @ j
    b = 0.5 * (b + b.T)
    lam, vec = np.linalg.eigh(b)
    lam, vec = lam[::-1], vec[:, ::-1]
    if lam[0] <= tol * scale ** 2:
        raise ValueError("no positive eigenvalue: distances are not embeddable")
    lam = np.clip(lam[:dims], 0.0, None)
    vec = vec[:, :dims]
    # deterministic sign: largest-magnitude entry of each axis positive
    idx = np.argmax(np.abs(vec), axis=0)
    sgn = np.sign(vec[idx, np.arange(dims)])
    sgn[sgn == 0] = 1.0
    return vec * sgn * np.sqrt(lam)

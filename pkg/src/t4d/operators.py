"""Precomputed surface operators: cotangent Laplacian, lumped mass, eigenbasis
and per-vertex tangent-plane gradient matrices.

The Laplacian follows the positive semidefinite convention ``L = D - W`` with
``w_ij = (cot a_ij + cot b_ij) / 2``. Eigenpairs solve ``L phi = lam M phi``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .mesh import Mesh, MeshError

DEFAULT_K = 128
DENSE_LIMIT = 6000
CACHE_ENV = "T4D_CACHE_DIR"
_CACHE_VERSION = 1


class EigensolverError(ArithmeticError):
    """The generalized eigenproblem did not converge."""


@dataclass(frozen=True, eq=False)
class SurfaceOperators:
    laplacian: sp.csr_matrix
    mass: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    gradient_x: sp.csr_matrix
    gradient_y: sp.csr_matrix
    tangent_frames: np.ndarray  # (V, 3, 3): rows are x-axis, y-axis, normal

    @property
    def n_vertices(self) -> int:
        return len(self.mass)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def cotangent_weights(vertices, faces, clamp: bool = False) -> sp.csr_matrix:
    """Symmetric sparse matrix of edge weights (cot a + cot b) / 2."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    n = len(v)
    rows, cols, vals = [], [], []
    for c in range(3):
        i, j, k = f[:, (c + 1) % 3], f[:, (c + 2) % 3], f[:, c]
        # angle at k, opposite edge (i, j)
        a = v[i] - v[k]
        b = v[j] - v[k]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.einsum("ij,ij->i", a, b) / cross
        cot = np.where(cross > 0, cot, 0.0)
        if clamp:
            cot = np.maximum(cot, 0.0)
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    w = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    w.sum_duplicates()
    return w


def cotangent_laplacian(vertices, faces, clamp: bool = False) -> sp.csr_matrix:
    w = cotangent_weights(vertices, faces, clamp)
    d = np.asarray(w.sum(axis=1)).ravel()
    lap = (sp.diags(d) - w).tocsr()
    lap.sum_duplicates()
    lap.eliminate_zeros()
    return lap


def lumped_mass(vertices, faces) -> np.ndarray:
    """Barycentric vertex areas: one third of every incident triangle."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    area = 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    mass = np.zeros(len(v))
    for c in range(3):
        np.add.at(mass, f[:, c], area / 3.0)
    return mass


def vertex_normals(vertices, faces) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])  # area weighted
    n = np.zeros_like(v)
    for c in range(3):
        np.add.at(n, f[:, c], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.tile([0.0, 0.0, 1.0], (len(v), 1)), where=norm > 0)


def tangent_frames(vertices, faces) -> np.ndarray:
    """Per-vertex orthonormal frames (V, 3, 3): x-axis, y-axis, normal.

    The x-axis is the world X axis projected onto the tangent plane (world Y
    when the normal is nearly parallel to X), so a mesh in the z=0 plane gets
    axis-aligned frames.
    """
    n = vertex_normals(vertices, faces)
    ref = np.tile([1.0, 0.0, 0.0], (len(n), 1))
    near = np.abs(n[:, 0]) > 0.9
    ref[near] = [0.0, 1.0, 0.0]
    x = ref - np.einsum("ij,ij->i", ref, n)[:, None] * n
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.cross(n, x)
    return np.stack([x, y, n], axis=1)


def gradient_matrices(vertices, faces, frames=None):
    """Least-squares tangent-plane gradient over each vertex one-ring.

    For vertex i with neighbours j, solves ``min_g sum_j (g . e_ij - (u_j - u_i))^2``
    where ``e_ij`` is the edge projected onto the frame at i. Returns sparse
    ``(G_x, G_y)`` such that ``G_x @ u`` is the x component.
    """
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    n = len(v)
    if frames is None:
        frames = tangent_frames(v, f)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    e = np.unique(e, axis=0)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    vec = v[dst] - v[src]
    ex = np.einsum("ij,ij->i", vec, frames[src, 0])
    ey = np.einsum("ij,ij->i", vec, frames[src, 1])
    # per-vertex normal matrix A_i = sum e e^T
    a = np.zeros((n, 2, 2))
    np.add.at(a[:, 0, 0], src, ex * ex)
    np.add.at(a[:, 0, 1], src, ex * ey)
    np.add.at(a[:, 1, 1], src, ey * ey)
    a[:, 1, 0] = a[:, 0, 1]
    ainv = np.linalg.pinv(a)
    cx = ainv[src, 0, 0] * ex + ainv[src, 0, 1] * ey
    cy = ainv[src, 1, 0] * ex + ainv[src, 1, 1] * ey

    def assemble(coef):
        diag = np.zeros(n)
        np.add.at(diag, src, -coef)
        g = sp.coo_matrix(
            (np.concatenate([coef, diag]),
             (np.concatenate([src, np.arange(n)]), np.concatenate([dst, np.arange(n)]))),
            shape=(n, n),
        ).tocsr()
        g.sum_duplicates()
        return g

    return assemble(cx), assemble(cy)


def _check_manifold_edges(faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bad = counts > 2
    if bad.any():
        a, b = uniq[np.argmax(bad)]
        raise MeshError(f"non-manifold edge ({a}, {b}) has {counts[bad].max()} incident faces")


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(phi), axis=0)
    s = np.sign(phi[idx, np.arange(phi.shape[1])])
    s[s == 0] = 1.0
    return phi * s


def generalized_eigenpairs(lap: sp.spmatrix, mass: np.ndarray, k: int,
                           dense_limit: int = DENSE_LIMIT):
    """Smallest ``k`` pairs of ``L phi = lam diag(mass) phi``, M-orthonormal."""
    n = len(mass)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    inv_sqrt = 1.0 / np.sqrt(mass)
    if n <= dense_limit or k >= n - 1:
        # symmetric reduction: M^-1/2 L M^-1/2 psi = lam psi, phi = M^-1/2 psi
        a = lap.toarray() * inv_sqrt[:, None] * inv_sqrt[None, :]
        a = 0.5 * (a + a.T)
        try:
            lam, psi = scipy.linalg.eigh(a, subset_by_index=[0, k - 1])
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(str(exc)) from exc
        phi = psi * inv_sqrt[:, None]
    else:
        m = sp.diags(mass).tocsc()
        shift = -1e-8 * float(np.abs(lap.diagonal()).max() / mass.max())
        try:
            lam, phi = sla.eigsh(lap.tocsc(), k=k, M=m, sigma=shift, which="LM")
        except (sla.ArpackNoConvergence, sla.ArpackError, RuntimeError) as exc:
            raise EigensolverError(f"eigsh failed: {exc}") from exc
        order = np.argsort(lam)
        lam, phi = lam[order], phi[:, order]
        # re-orthonormalize in the mass inner product
        gram = phi.T @ (mass[:, None] * phi)
        try:
            chol = np.linalg.cholesky(0.5 * (gram + gram.T))
        except np.linalg.LinAlgError as exc:
            raise EigensolverError("eigenvectors are not mass-independent") from exc
        phi = scipy.linalg.solve_triangular(chol, phi.T, lower=True).T
    lam = np.clip(lam, 0.0, None)
    return lam, _fix_signs(phi)


def precompute_operators(mesh: Mesh, k: int = DEFAULT_K, clamp_cot: bool = False,
                         dense_limit: int = DENSE_LIMIT) -> SurfaceOperators:
    """Laplacian, mass, ``k`` eigenpairs and gradient matrices for ``mesh``."""
    v, f = mesh.vertices, mesh.faces
    if not 1 <= k <= mesh.n_vertices:
        raise ValueError(f"k must be in [1, V={mesh.n_vertices}], got {k}")
    if mesh.n_faces == 0:
        raise MeshError("mesh has no faces")
    _check_manifold_edges(f)
    mass = lumped_mass(v, f)
    if np.any(mass <= 0):
        bad = int(np.flatnonzero(mass <= 0)[0])
        raise MeshError(f"vertex {bad} has zero area (unreferenced or degenerate fan)")
    lap = cotangent_laplacian(v, f, clamp=clamp_cot)
    lam, phi = generalized_eigenpairs(lap, mass, k, dense_limit=dense_limit)
    frames = tangent_frames(v, f)
    gx, gy = gradient_matrices(v, f, frames)
    return SurfaceOperators(lap, mass, lam, phi, gx, gy, frames)


def heat_diffuse(ops: SurfaceOperators, u0, t: float) -> np.ndarray:
    """Spectral heat flow ``Phi exp(-lam t) Phi^T M u0``; ``u0`` may be (V,) or (V, C)."""
    if t < 0:
        raise ValueError(f"diffusion time must be non-negative, got {t}")
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape[0] != ops.n_vertices:
        raise ValueError(f"field has {u0.shape[0]} entries, mesh has {ops.n_vertices} vertices")
    mu = u0 * ops.mass if u0.ndim == 1 else u0 * ops.mass[:, None]
    coef = ops.eigenvectors.T @ mu
    decay = np.exp(-ops.eigenvalues * t)
    coef = coef * decay if coef.ndim == 1 else coef * decay[:, None]
    return ops.eigenvectors @ coef


def gradient(ops: SurfaceOperators, u) -> np.ndarray:
    """Tangent-frame gradient of a scalar field, shape (V, 2)."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (ops.n_vertices,):
        raise ValueError(f"expected a field of shape ({ops.n_vertices},), got {u.shape}")
    return np.stack([ops.gradient_x @ u, ops.gradient_y @ u], axis=1)


# ---------------------------------------------------------------------------
# cache


def cache_key(mesh: Mesh, k: int, clamp_cot: bool = False) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    h.update(f"k={k};clamp={int(clamp_cot)};v={_CACHE_VERSION}".encode())
    return h.hexdigest()


def _sparse_parts(prefix, m):
    m = m.tocsr()
    return {f"{prefix}_data": m.data, f"{prefix}_indices": m.indices,
            f"{prefix}_indptr": m.indptr, f"{prefix}_shape": np.asarray(m.shape)}


def _sparse_from(prefix, z):
    return sp.csr_matrix((z[f"{prefix}_data"], z[f"{prefix}_indices"], z[f"{prefix}_indptr"]),
                         shape=tuple(z[f"{prefix}_shape"]))


def save_operators(path, ops: SurfaceOperators, key: str = "") -> None:
    arrays = {"key": np.asarray(key), "mass": ops.mass, "eigenvalues": ops.eigenvalues,
              "eigenvectors": ops.eigenvectors, "tangent_frames": ops.tangent_frames}
    arrays.update(_sparse_parts("laplacian", ops.laplacian))
    arrays.update(_sparse_parts("gradient_x", ops.gradient_x))
    arrays.update(_sparse_parts("gradient_y", ops.gradient_y))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_operators(path, key: str | None = None) -> SurfaceOperators:
    with np.load(path, allow_pickle=False) as z:
        if key is not None and str(z["key"]) != key:
            raise ValueError(f"{path}: cache key mismatch")
        return SurfaceOperators(
            laplacian=_sparse_from("laplacian", z),
            mass=z["mass"],
            eigenvalues=z["eigenvalues"],
            eigenvectors=z["eigenvectors"],
            gradient_x=_sparse_from("gradient_x", z),
            gradient_y=_sparse_from("gradient_y", z),
            tangent_frames=z["tangent_frames"],
        )


def cached_operators(mesh: Mesh, k: int = DEFAULT_K, clamp_cot: bool = False,
                     cache_dir=None) -> SurfaceOperators:
    """Like :func:`precompute_operators`, reusing ``<cache_dir>/<hash>.npz``.

    ``cache_dir`` defaults to ``$T4D_CACHE_DIR``; without either, nothing is cached.
    """
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return precompute_operators(mesh, k, clamp_cot)
    key = cache_key(mesh, k, clamp_cot)
    path = Path(cache_dir) / f"{key}.npz"
    if path.exists():
        return load_operators(path, key)
    ops = precompute_operators(mesh, k, clamp_cot)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    save_operators(tmp, ops, key)
    os.replace(tmp, path)
    return ops

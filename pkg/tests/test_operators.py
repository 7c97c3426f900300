import numpy as np
import pytest
import scipy.sparse as sp

from oracles import heat_expm
from t4d.mesh import Mesh, MeshError
from t4d.operators import (
    cache_key,
    cached_operators,
    cotangent_laplacian,
    cotangent_weights,
    gradient,
    heat_diffuse,
    load_operators,
    precompute_operators,
    save_operators,
)
from t4d.primitives import icosphere, plane_grid, synthetic_head

EQUILATERAL = Mesh([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]])


def fixtures():
    return {
        "grid": plane_grid(9),
        "sphere": icosphere(2),
        "patch": synthetic_head(15, 19).mesh,
    }


@pytest.fixture(scope="module", params=["grid", "sphere", "patch"])
def full_ops(request):
    m = fixtures()[request.param]
    return m, precompute_operators(m, k=m.n_vertices)


def test_equilateral_weights_and_mass():
    ops = precompute_operators(EQUILATERAL, k=3)
    off = ops.laplacian.toarray()[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, -1 / (2 * np.sqrt(3)), rtol=1e-12)  # L = D - W
    np.testing.assert_allclose(cotangent_weights(EQUILATERAL.vertices, EQUILATERAL.faces).data,
                               0.28867513459481287, rtol=1e-12)
    np.testing.assert_allclose(ops.mass, np.sqrt(3) / 12, rtol=1e-12)
    assert abs(ops.mass[0] - 0.14433756729740643) < 1e-12


def test_laplacian_invariants(full_ops):
    m, ops = full_ops
    lap = ops.laplacian
    dense = lap.toarray()
    scale = np.abs(dense).max()
    assert np.abs(dense - dense.T).max() <= 1e-10 * scale
    assert np.abs(dense.sum(axis=1)).max() <= 1e-8
    rng = np.random.default_rng(3)
    for _ in range(100):
        u = rng.normal(size=m.n_vertices)
        assert u @ (lap @ u) >= -1e-8
    assert ops.eigenvalues.min() >= -1e-8


def test_mass_invariants(full_ops):
    m, ops = full_ops
    assert np.all(ops.mass > 0)
    assert abs(ops.mass.sum() - m.area()) <= 1e-10 * m.area()


def test_eigenbasis(full_ops):
    m, ops = full_ops
    phi = ops.eigenvectors
    gram = phi.T @ (ops.mass[:, None] * phi)
    assert np.abs(gram - np.eye(ops.k)).max() <= 1e-8
    assert abs(ops.eigenvalues[0]) < 1e-8
    c = phi[:, 0]
    assert np.ptp(c) <= 1e-8 * np.abs(c).max()
    assert np.all(np.diff(ops.eigenvalues) >= -1e-12)
    resid = ops.laplacian @ phi - (ops.mass[:, None] * phi) * ops.eigenvalues
    bound = 1e-6 * np.maximum(1.0, ops.eigenvalues)
    assert np.all(np.abs(resid).max(axis=0) <= bound)


def test_k1_constant():
    m = icosphere(1)
    ops = precompute_operators(m, k=1)
    assert abs(ops.eigenvalues[0]) < 1e-10
    phi = ops.eigenvectors[:, 0]
    np.testing.assert_allclose(phi, phi[0], rtol=1e-8)
    assert abs(phi @ (ops.mass * phi) - 1.0) < 1e-10


def test_iterative_solver_matches_dense():
    m = synthetic_head(15, 19).mesh
    dense = precompute_operators(m, k=12)
    iterative = precompute_operators(m, k=12, dense_limit=10)
    np.testing.assert_allclose(iterative.eigenvalues, dense.eigenvalues, rtol=1e-7, atol=1e-10)
    gram = iterative.eigenvectors.T @ (iterative.mass[:, None] * iterative.eigenvectors)
    assert np.abs(gram - np.eye(12)).max() <= 1e-8


def test_errors():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    nonmanifold = Mesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(MeshError, match="non-manifold"):
        precompute_operators(nonmanifold, k=2)
    with pytest.raises(ValueError):
        precompute_operators(EQUILATERAL, k=4)
    ops = precompute_operators(EQUILATERAL, k=3)
    with pytest.raises(ValueError):
        heat_diffuse(ops, np.ones(3), -1.0)
    with pytest.raises(ValueError):
        gradient(ops, np.ones(4))


def test_heat_identity_and_limit():
    m = icosphere(1)
    ops = precompute_operators(m, k=m.n_vertices)
    u0 = np.random.default_rng(0).normal(size=m.n_vertices)
    np.testing.assert_allclose(heat_diffuse(ops, u0, 0.0), u0, rtol=1e-8, atol=1e-8)
    far = heat_diffuse(ops, u0, 1e6)
    mean = (ops.mass @ u0) / ops.mass.sum()
    np.testing.assert_allclose(far, mean, atol=1e-10)
    # truncated basis still reaches the same limit
    ops8 = precompute_operators(m, k=8)
    np.testing.assert_allclose(heat_diffuse(ops8, u0, 1e6), mean, atol=1e-10)


def test_heat_conservation_against_expm():
    m = icosphere(2)
    ops = precompute_operators(m, k=m.n_vertices)
    u0 = np.zeros(m.n_vertices)
    u0[7] = 1.0
    total = ops.mass @ u0
    for t in (0.01, 0.1, 1.0):
        u = heat_diffuse(ops, u0, t)
        assert abs(ops.mass @ u - total) <= 1e-8 * total
        ref = heat_expm(ops.laplacian, ops.mass, u0, t)
        assert abs(ops.mass @ ref - total) <= 1e-8 * total
        np.testing.assert_allclose(u, ref, atol=1e-6 * np.abs(ref).max())


def test_heat_semigroup_and_max_principle():
    m = icosphere(2)
    ops = precompute_operators(m, k=m.n_vertices)
    u0 = np.zeros(m.n_vertices)
    u0[0] = 1.0
    a = heat_diffuse(ops, heat_diffuse(ops, u0, 0.05), 0.2)
    b = heat_diffuse(ops, u0, 0.25)
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-7 * np.abs(b).max())
    for t in (0.001, 0.01, 0.1, 1.0):
        u = heat_diffuse(ops, u0, t)
        assert u.min() >= -1e-6 and u.max() <= 1 + 1e-6


def test_heat_multichannel():
    m = icosphere(1)
    ops = precompute_operators(m, k=10)
    u = np.random.default_rng(1).normal(size=(m.n_vertices, 3))
    out = heat_diffuse(ops, u, 0.3)
    for c in range(3):
        np.testing.assert_allclose(out[:, c], heat_diffuse(ops, u[:, c], 0.3), rtol=1e-12)


def test_gradient_constant_is_zero():
    for m in fixtures().values():
        ops = precompute_operators(m, k=2)
        assert np.abs(gradient(ops, np.full(m.n_vertices, 3.7))).max() <= 1e-10


def _interior(grid_n):
    idx = np.arange(grid_n * grid_n).reshape(grid_n, grid_n)
    return idx[1:-1, 1:-1].ravel()


def test_gradient_linear_fields_on_plane():
    g = plane_grid(9, spacing=0.7)
    ops = precompute_operators(g, k=2)
    x, y = g.vertices[:, 0], g.vertices[:, 1]
    inner = _interior(9)
    np.testing.assert_allclose(gradient(ops, x)[inner], np.tile([1.0, 0.0], (len(inner), 1)),
                               atol=1e-6)
    gr = gradient(ops, x + 2 * y)[inner]
    np.testing.assert_allclose(np.linalg.norm(gr, axis=1), np.sqrt(5), atol=1e-6)


def test_clamped_cotangents():
    # obtuse triangle pair gives a negative weight unless clamped
    v = [[0, 0, 0], [4, 0, 0], [2, 0.3, 0], [2, -3, 0]]
    f = [[0, 1, 2], [0, 3, 1]]
    w = cotangent_weights(v, f).toarray()
    assert w[0, 1] < 0
    wc = cotangent_weights(v, f, clamp=True).toarray()
    assert wc.min() >= 0
    lap = cotangent_laplacian(v, f, clamp=True)
    assert np.abs(lap.sum(axis=1)).max() < 1e-12


def test_cache_roundtrip(tmp_path, monkeypatch):
    m = icosphere(1)
    ops = precompute_operators(m, k=6)
    path = tmp_path / "ops.cache"
    save_operators(path, ops, cache_key(m, 6))
    back = load_operators(path, cache_key(m, 6))
    np.testing.assert_array_equal(back.eigenvectors, ops.eigenvectors)
    assert (back.laplacian != ops.laplacian).nnz == 0
    assert sp.issparse(back.gradient_x)
    with pytest.raises(ValueError):
        load_operators(path, cache_key(m, 7))

    monkeypatch.setenv("T4D_CACHE_DIR", str(tmp_path / "cache"))
    first = cached_operators(m, 6)
    files = list((tmp_path / "cache").iterdir())
    assert len(files) == 1
    again = cached_operators(m, 6)
    np.testing.assert_array_equal(first.eigenvalues, again.eigenvalues)
    assert cache_key(m, 6) != cache_key(m.with_vertices(m.vertices * 2), 6)

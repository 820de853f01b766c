import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zorfl.errors import NumericalFailure
from zorfl.linalg import RngStream, as_matrix, fro, inner, sample_gaussian, sample_unit_sphere, spawn_stream, sym, thin_svd


def test_svd_identity():
    u, s, v = thin_svd(np.eye(3))
    assert np.allclose(s, 1.0)
    assert np.allclose(u @ v.T, np.eye(3))


def test_svd_diagonal():
    _, s, _ = thin_svd(np.diag([1.0, 3.0, 2.0]))
    assert np.allclose(s, [3.0, 2.0, 1.0])


def test_svd_reconstruction_random():
    a = np.random.default_rng(0).standard_normal((10, 3))
    u, s, v = thin_svd(a)
    assert fro(u * s @ v.T - a) / fro(a) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_svd_properties(rows, cols, seed):
    a = np.random.default_rng(seed).standard_normal((rows, cols))
    u, s, v = thin_svd(a)
    k = min(rows, cols)
    assert fro(u * s @ v.T - a) <= 1e-10 * fro(a)
    assert fro(u.T @ u - np.eye(k)) <= 1e-12
    assert fro(v.T @ v - np.eye(k)) <= 1e-12
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)


def test_svd_rejects_nonfinite():
    with pytest.raises(NumericalFailure):
        thin_svd(np.array([[1.0, np.nan]]))


def test_svd_stack():
    a = np.random.default_rng(1).standard_normal((4, 5, 3))
    u, s, v = thin_svd(a)
    assert np.allclose(np.einsum("nij,nj,nkj->nik", u, s, v), a, atol=1e-12)


def test_as_matrix():
    assert as_matrix([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(ValueError):
        as_matrix(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        as_matrix([[np.inf]])


def test_inner_and_sym():
    a = np.arange(6.0).reshape(3, 2)
    assert inner(a, a) == pytest.approx(np.trace(a.T @ a))
    b = np.arange(4.0).reshape(2, 2)
    assert np.allclose(sym(b), sym(b).T)


# -- streams ------------------------------------------------------------------


def test_stream_determinism():
    a = sample_gaussian(RngStream(1, (0,)), 3, 2)
    b = sample_gaussian(RngStream(1, (0,)), 3, 2)
    assert np.array_equal(a, b)


def test_spawn_same_index_same_stream():
    s = RngStream(5)
    assert spawn_stream(s, 3) == s.spawn(3)
    assert np.array_equal(sample_gaussian(s.spawn(3), 2, 2), sample_gaussian(spawn_stream(s, 3), 2, 2))


def test_spawned_children_do_not_collide():
    parent = RngStream(9, (1, 2))
    firsts = {parent.spawn(i).generator().standard_normal() for i in range(10_000)}
    assert len(firsts) == 10_000


def test_spawn_order_irrelevant():
    parent = RngStream(2)
    forward = [sample_gaussian(parent.spawn(i), 2, 2) for i in range(5)]
    backward = [sample_gaussian(parent.spawn(i), 2, 2) for i in reversed(range(5))][::-1]
    assert all(np.array_equal(f, b) for f, b in zip(forward, backward))


def test_seed_and_path_both_matter():
    base = RngStream(0, (1, 2)).key()
    assert RngStream(1, (1, 2)).key() != base
    assert RngStream(0, (2, 1)).key() != base
    assert RngStream(0, (1, 2, 0)).key() != base


def test_unit_sphere_norm():
    u = sample_unit_sphere(RngStream(0), 4, 3)
    assert abs(fro(u) - 1.0) <= 1e-14
    us = sample_unit_sphere(RngStream(0), 4, 3, size=1000)
    assert np.max(np.abs(fro(us) - 1.0)) <= 1e-14


def test_unit_sphere_rejects_empty():
    with pytest.raises(ValueError):
        sample_unit_sphere(RngStream(0), 0, 3)


def test_unit_sphere_moments():
    u = sample_unit_sphere(RngStream(3, (1,)), 3, 2, size=1_000_000).reshape(-1, 6)
    assert np.max(np.abs(u.mean(axis=0))) <= 5e-3
    cov = u.T @ u / len(u)
    assert np.all(np.abs(np.diag(cov) - 1 / 6) <= 0.1 / 6)
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) <= 5e-3


def test_gaussian_moments():
    g = sample_gaussian(RngStream(4, (1,)), 2, 2, size=250_000).ravel()
    assert abs(g.var() - 1.0) <= 0.02
    assert abs(g.mean()) <= 5e-3

"""Both kernel backends must agree; the compiled one is optional."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lsqgap import _pure, kernels

BACKENDS = kernels.available_backends()
native_only = pytest.mark.skipif("native" not in BACKENDS, reason="compiled kernels not built")


@pytest.mark.parametrize("backend", BACKENDS)
def test_floyd_supports_are_distinct_subsets(backend):
    u = np.random.default_rng(0).random((5000, 4))
    s = kernels.floyd_supports(u, 16, backend)
    assert s.shape == (5000, 4)
    assert s.min() >= 0 and s.max() < 16
    assert np.all(np.sort(s, axis=1)[:, 1:] != np.sort(s, axis=1)[:, :-1])


def test_floyd_subsets_are_uniform():
    # all C(4, 2) = 6 supports equally likely
    u = np.random.default_rng(1).random((60000, 2))
    s = np.sort(kernels.floyd_supports(u, 4), axis=1)
    _, counts = np.unique(s[:, 0] * 4 + s[:, 1], return_counts=True)
    assert len(counts) == 6
    assert np.all(np.abs(counts - 10000) < 5 * np.sqrt(10000 * 5 / 6))


def test_floyd_rejects_oversized_subsets():
    for backend in BACKENDS:
        with pytest.raises(ValueError):
            kernels.floyd_supports(np.zeros((1, 5)), 4, backend)


@native_only
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1), st.integers(0, 200))
def test_floyd_backends_identical(d, seed, m):
    g = np.random.default_rng(seed)
    k = int(g.integers(1, d + 1))
    u = g.random((m, k))
    assert_array_equal(kernels.floyd_supports(u, d, "native"), kernels.floyd_supports(u, d, "python"))


@native_only
def test_cooccurrence_backends_identical():
    u = np.random.default_rng(2).random((3000, 5))
    s = kernels.floyd_supports(u, 25)
    a = kernels.support_cooccurrence(s, 25, "native")
    assert_array_equal(a, kernels.support_cooccurrence(s, 25, "python"))
    assert_array_equal(a, a.T)
    assert_array_equal(np.diag(a), np.bincount(s.ravel(), minlength=25))


def test_cooccurrence_empty():
    for backend in BACKENDS:
        assert_array_equal(kernels.support_cooccurrence(np.zeros((0, 3), np.int64), 5, backend), 0)


def _vaw_reference(X, y, lam, x):
    d = X.shape[1]
    return x @ np.linalg.solve(lam * np.eye(d) + X.T @ X + np.outer(x, x), X.T @ y)


@pytest.mark.parametrize("backend", BACKENDS)
def test_vaw_online_matches_direct_solves(backend):
    g = np.random.default_rng(3)
    X = g.uniform(-1, 1, (40, 3))
    y = g.uniform(-1, 1, 40)
    preds = kernels.vaw_online_predictions(X, y, 0.7, backend)
    ref = [_vaw_reference(X[:t], y[:t], 0.7, X[t]) for t in range(40)]
    assert_allclose(preds, ref, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("sparse", [True, False])
def test_vaw_prefix_average_matches_direct_solves(backend, sparse):
    g = np.random.default_rng(4)
    X = g.uniform(-1, 1, (25, 4))
    y = g.uniform(-1, 1, 25)
    Q = g.uniform(-1, 1, (6, 4))
    if sparse:
        Q[:, 1:3] = 0.0
    got = kernels.vaw_prefix_average(X, y, 2.0, Q, backend)
    ref = [np.mean([_vaw_reference(X[:j], y[:j], 2.0, q) for j in range(25)]) for q in Q]
    assert_allclose(got, ref, rtol=1e-10, atol=1e-13)


def test_vaw_prefix_average_empty_sample():
    for backend in BACKENDS:
        assert_array_equal(kernels.vaw_prefix_average(np.zeros((0, 3)), np.zeros(0), 1.0, np.ones((2, 3)), backend), 0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_forced_by_environment():
    env = dict(os.environ, LSQGAP_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from lsqgap import kernels; print(kernels.BACKEND)"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert out.stdout.strip() == "python"


def test_pure_module_is_self_contained():
    assert kernels.get_backend("python") is _pure

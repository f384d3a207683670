from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridband import tridiag
from hybridband.errors import ConvergenceError, DimensionError
from hybridband.tridiag import TridiagProblem, gershgorin_bounds, solve_tridiag, sturm_count


def test_decoupled():
    w, _ = solve_tridiag(TridiagProblem([4.0, 2.0, 7.0], [0.0, 0.0]))
    np.testing.assert_array_equal(w, [2, 4, 7])


def test_chebyshev():
    w, _ = solve_tridiag(TridiagProblem(np.zeros(4), np.ones(3)))
    exact = np.sort(2 * np.cos(np.arange(1, 5) * np.pi / 5))
    np.testing.assert_allclose(w, exact, atol=1e-15)


def test_single():
    w, v = solve_tridiag(TridiagProblem([2.5], []), want_vectors=True)
    assert w.tolist() == [2.5] and v.tolist() == [[1.0]]


def test_validation():
    with pytest.raises(DimensionError):
        TridiagProblem([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        TridiagProblem([np.nan], [])


def test_non_convergence_names_index(monkeypatch):
    p = TridiagProblem(np.arange(6.0), np.ones(5))
    real = tridiag._tql
    monkeypatch.setattr(tridiag, "_tql", lambda d, e, z, wv, it, eps: real(d, e, z, wv, 0, eps))
    with pytest.raises(ConvergenceError) as info:
        solve_tridiag(p)
    assert info.value.index == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_contract(n, seed):
    r = np.random.default_rng(seed)
    p = TridiagProblem(r.standard_normal(n), r.standard_normal(n - 1))
    w, v = solve_tridiag(p, want_vectors=True)
    t = p.dense()
    scale = np.max(np.abs(p.d)) + (np.max(np.abs(p.e)) if n > 1 else 0.0)
    assert np.all(np.diff(w) >= 0)
    assert np.max(np.abs(v.T @ v - np.eye(n))) <= 1e-12
    assert np.max(np.abs(t @ v - v * w)) <= 1e-11 * scale
    assert abs(w.sum() - p.d.sum()) <= 1e-11 * n * max(scale, 1.0)
    mids = 0.5 * (w[:-1] + w[1:])
    for i, x in enumerate(mids):
        if w[i + 1] - w[i] > 1e-9:
            assert sturm_count(p, x) == i + 1


class TestSturm:
    def test_pair(self):
        assert sturm_count(TridiagProblem([0.0, 0.0], [1.0]), 0.0) == 1

    def test_below_gershgorin(self, rng):
        p = TridiagProblem(rng.standard_normal(10), rng.standard_normal(9))
        lo, hi = gershgorin_bounds(p)
        assert sturm_count(p, lo - 1e-9) == 0
        assert sturm_count(p, hi + 1e-9) == 10

    def test_agrees_with_solver(self, rng):
        p = TridiagProblem(rng.standard_normal(32), rng.standard_normal(31))
        w, _ = solve_tridiag(p)
        for x in np.linspace(w[0] - 1, w[-1] + 1, 57):
            assert sturm_count(p, x) == int(np.sum(w < x))

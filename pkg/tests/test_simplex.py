import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import grid_simplex_min
from scmyth.simplex import SolverError, simplex_least_squares


def _objective(A, b, w):
    r = A @ w - b
    return float(r @ r)


@pytest.mark.parametrize("seed", range(40))
def test_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    J = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    A, b = rng.normal(size=(k, J)), rng.normal(size=k)
    sol = simplex_least_squares(A, b)
    assert sol.objective <= grid_simplex_min(A, b, step=1e-2) + 1e-12
    assert sol.w.min() >= 0 and abs(sol.w.sum() - 1) < 1e-12


def test_interior_solution_is_unconstrained_lstsq():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    b = np.array([0.2, 0.3, 0.5])
    sol = simplex_least_squares(A, b)
    assert np.allclose(sol.w, b, atol=1e-8)
    assert sol.objective < 1e-15


def test_vertex_solution():
    A = np.array([[0.0, 1.0, 2.0]])
    sol = simplex_least_squares(A, [5.0])
    assert np.allclose(sol.w, [0, 0, 1], atol=1e-9)


def test_identical_donors_split_evenly():
    A = np.array([[1.0, 1.0, 3.0], [2.0, 2.0, 0.0]])
    sol = simplex_least_squares(A, [1.0, 2.0])
    assert np.allclose(sol.w, [0.5, 0.5, 0.0], atol=1e-8)


def test_ridge_shrinks_towards_uniform():
    rng = np.random.default_rng(3)
    A, b = rng.normal(size=(2, 6)), rng.normal(size=2)
    heavy = simplex_least_squares(A, b, ridge=1e8 * np.sum(A * A))
    assert np.allclose(heavy.w, 1 / 6, atol=1e-6)


def test_input_validation():
    with pytest.raises(ValueError):
        simplex_least_squares(np.ones((2, 3)), np.ones(3))
    with pytest.raises(ValueError):
        simplex_least_squares(np.ones((2, 3)), np.ones(2), ridge=-1)
    with pytest.raises(ValueError):
        simplex_least_squares(np.ones((2, 0)), np.ones(2))


def test_solver_error_carries_best():
    err = SolverError("x", best=np.array([1.0]))
    assert err.best.tolist() == [1.0]


def test_large_pool_kkt():
    rng = np.random.default_rng(9)
    A, b = rng.normal(size=(13, 50)), rng.normal(size=13)
    sol = simplex_least_squares(A, b)
    assert sol.kkt_residual < 1e-8
    # projected-gradient optimality: no feasible direction improves
    g = 2 * A.T @ (A @ sol.w - b)
    supp = sol.w > 1e-10
    assert g.min() >= g[supp].max() - 1e-6 * max(1.0, np.abs(g).max())


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.data())
def test_feasible_and_no_worse_than_vertices(k, J, data):
    A = data.draw(arrays(float, (k, J), elements=finite))
    b = data.draw(arrays(float, (k,), elements=finite))
    sol = simplex_least_squares(A, b)
    assert sol.w.min() >= 0
    assert abs(sol.w.sum() - 1) < 1e-9
    vertex_best = min(_objective(A, b, np.eye(J)[j]) for j in range(J))
    assert sol.objective <= vertex_best + 1e-9 * max(1.0, vertex_best)
    centroid = _objective(A, b, np.full(J, 1.0 / J))
    assert sol.objective <= centroid + 1e-9 * max(1.0, centroid)

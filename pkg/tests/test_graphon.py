import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmf.graphon import (
    Graphon,
    StepGraphon,
    _alternating_max,
    cell_index,
    constant,
    cosine,
    discretize,
    evaluate_step,
    infty_to_one_diff,
    make_graphon,
    minimum,
    product,
)


def test_builtin_graphons_are_symmetric_and_bounded():
    for g in (constant(0.3), product(), minimum(), cosine()):
        g.check(probes=500)


def test_check_rejects_bad_kernels():
    with pytest.raises(ValueError, match="symmetric"):
        Graphon(lambda p, q: p * q**2).check()
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        Graphon(lambda p, q: 2 * p * q).check()
    with pytest.raises(ValueError):
        constant(1.5)


def test_make_graphon():
    assert make_graphon("constant", {"c": 0.25})(0.1, 0.9) == 0.25
    assert make_graphon("cosine")(0.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError, match="unknown graphon"):
        make_graphon("nope")


def test_discretize_worked_examples():
    np.testing.assert_array_equal(discretize(product(), 2).weights, [[0.25, 0.5], [0.5, 1.0]])
    assert np.all(discretize(constant(0.7), 5).weights == 0.7)
    assert discretize(minimum(), 4).weights[1, 2] == 0.5


@pytest.mark.parametrize("g", [product(), minimum(), cosine()])
@pytest.mark.parametrize("n", [1, 3, 7, 16])
def test_discretize_samples_right_endpoints_symmetrically(g, n):
    sg = discretize(g, n)
    assert np.array_equal(sg.weights, sg.weights.T)
    for i, j in itertools.product(range(n), repeat=2):
        assert sg.weights[i, j] == pytest.approx(float(g((i + 1) / n, (j + 1) / n)), abs=1e-15)


def test_discretize_is_idempotent_on_own_grid():
    rng = np.random.default_rng(1)
    w = rng.random((6, 6))
    sg = StepGraphon(np.triu(w) + np.triu(w, 1).T)
    again = discretize(sg.as_graphon(), 6)
    assert np.array_equal(again.weights, sg.weights)
    assert again.origin_value == sg.origin_value


def test_cell_index_boundaries():
    assert cell_index(0.0, 4) == 0
    assert cell_index(0.25, 4) == 0
    assert cell_index(0.2500001, 4) == 1
    assert cell_index(1.0, 4) == 3
    assert cell_index(0.99, 4) == 3
    # 0.1 * 3 is 0.30000000000000004; still the cell ending at 3/10
    assert cell_index(0.1 * 3, 10) == 2
    with pytest.raises(ValueError):
        cell_index(1.01, 4)
    with pytest.raises(ValueError):
        cell_index(-0.1, 4)


@given(st.floats(min_value=1e-6, max_value=1.0), st.integers(min_value=1, max_value=200))
def test_cell_index_half_open(p, n):
    i = int(cell_index(p, n))
    assert 0 <= i < n
    assert i / n < p + 1e-9 and p <= (i + 1) / n + 1e-9


def test_evaluate_step_examples():
    sg = StepGraphon(np.array([[0.1, 0.2], [0.2, 0.4]]))
    assert evaluate_step(sg, 0.3, 0.9) == 0.2
    assert evaluate_step(sg, 0.5, 0.5) == 0.1
    assert evaluate_step(sg, 0.51, 0.5) == 0.2
    assert isinstance(evaluate_step(sg, 0.3, 0.9), float)
    np.testing.assert_array_equal(sg(np.array([0.2, 0.8]), np.array([0.8, 0.8])), [0.2, 0.4])


def test_corner_uses_graphon_origin_value():
    g = Graphon(lambda p, q: 0.5 + 0.5 * np.cos(3 * (p + q)), "wave")
    sg = discretize(g, 2)
    assert sg(0.0, 0.0) == pytest.approx(1.0)
    assert sg(0.0, 0.0) != sg.weights[0, 0]
    assert sg(0.0, 0.1) == sg.weights[0, 0]
    # default corner for a hand-built step graphon is its first cell
    assert StepGraphon(np.eye(2) * 0.5)(0.0, 0.0) == 0.5


def test_step_graphon_validation_and_immutability():
    with pytest.raises(ValueError, match="square"):
        StepGraphon(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="symmetric"):
        StepGraphon(np.array([[0.0, 0.1], [0.2, 0.0]]))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        StepGraphon(np.array([[1.5]]))
    sg = StepGraphon(np.eye(2))
    with pytest.raises(ValueError):
        sg.weights[0, 0] = 0.3


def test_step_graphon_csv_roundtrip(tmp_path):
    sg = discretize(cosine(), 5)
    path = tmp_path / "w.csv"
    sg.to_csv(path)
    assert path.read_text().splitlines()[0] == "i,j,weight"
    assert np.array_equal(StepGraphon.from_csv(path).weights, sg.weights)


def test_infty_to_one_identical_is_zero():
    sg = discretize(product(), 8)
    assert infty_to_one_diff(sg, sg) == 0.0
    assert infty_to_one_diff(product(), product()) == 0.0


def test_infty_to_one_constants():
    for res in (1, 5, 64):
        assert infty_to_one_diff(constant(1.0), constant(0.0), grid_resolution=res) == pytest.approx(1.0, abs=1e-14)
    assert infty_to_one_diff(constant(0.3), constant(0.8)) == pytest.approx(0.5, abs=1e-14)


def test_infty_to_one_rank_one_is_exact():
    # for a nonnegative rank-one kernel the optimum is the all-ones pair
    grid = (np.arange(64) + 0.5) / 64
    expected = grid.mean() ** 2
    assert infty_to_one_diff(product(), constant(0.0)) == pytest.approx(expected, rel=1e-12)


def test_infty_to_one_rejects_coarse_grid():
    with pytest.raises(ValueError):
        infty_to_one_diff(discretize(product(), 32), product(), grid_resolution=16)
    with pytest.raises(ValueError):
        infty_to_one_diff(product(), product(), restarts=0)


def _exhaustive(B):
    best = -np.inf
    for signs in itertools.product([-1.0, 1.0], repeat=B.shape[1]):
        x = np.array(signs)
        best = max(best, np.abs(B @ x).sum())
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_alternating_max_is_attained_and_below_exhaustive(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 7))
    B = rng.standard_normal((r, r))
    value, x, y = _alternating_max(B, 8, np.random.default_rng(seed))
    assert value == pytest.approx(float(y @ B @ x), abs=1e-12)
    assert value <= _exhaustive(B) + 1e-12


def test_estimate_dominates_random_sign_pairs():
    a, b = cosine(), discretize(cosine(), 4)
    res = 32
    est = infty_to_one_diff(a, b, grid_resolution=res)
    grid = (np.arange(res) + 0.5) / res
    B = (a(grid[:, None], grid[None, :]) - b(grid[:, None], grid[None, :])) / res**2
    rng = np.random.default_rng(7)
    for _ in range(500):
        x, y = rng.choice([-1.0, 1.0], size=(2, res))
        assert y @ B @ x <= est + 1e-15


def test_estimate_matches_exhaustive_on_small_grid():
    a, b = product(), discretize(product(), 2)
    res = 8
    grid = (np.arange(res) + 0.5) / res
    B = (a(grid[:, None], grid[None, :]) - b(grid[:, None], grid[None, :])) / res**2
    est = infty_to_one_diff(a, b, grid_resolution=res, restarts=32)
    assert est <= _exhaustive(B) + 1e-15
    assert est >= 0.9 * _exhaustive(B)

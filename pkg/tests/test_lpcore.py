import numpy as np
import pytest

from polyrg.lpcore import LinearProgram, LpStatus, maximize, solve_lp

from conftest import brute_force_lp, random_bounded_lp


@pytest.mark.parametrize("seed", range(40))
def test_simplex_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    c, G, g = random_bounded_lp(rng)
    out = maximize(c, G, g)
    assert out.optimal
    assert out.value == pytest.approx(brute_force_lp(c, G, g), abs=1e-7)
    assert np.all(G @ out.point <= g + 1e-7)


@pytest.mark.parametrize("seed", range(15))
def test_simplex_agrees_with_highs_on_tall_problems(seed):
    rng = np.random.default_rng(100 + seed)
    d = 6
    G = rng.normal(size=(200, d))
    g = rng.uniform(0.5, 2, 200)
    c = rng.normal(size=d)
    a, b = maximize(c, G, g, "simplex"), maximize(c, G, g, "highs")
    assert a.status == b.status
    if a.optimal:
        assert a.value == pytest.approx(b.value, rel=1e-7, abs=1e-7)


def test_infeasible_and_unbounded():
    G = np.array([[1.0], [-1.0]])
    assert maximize([1.0], G, [-1.0, -1.0]).status is LpStatus.INFEASIBLE
    assert maximize([1.0], np.array([[-1.0]]), [0.0]).status is LpStatus.UNBOUNDED
    assert maximize([1.0, 0.0], np.array([[0.0, 1.0]]), [1.0]).status is LpStatus.UNBOUNDED
    for method in ("simplex", "highs"):
        assert maximize([1.0], G, [-1.0, -1.0], method).status is LpStatus.INFEASIBLE


def test_no_rows():
    assert maximize([0.0, 0.0], np.zeros((0, 2)), []).value == 0.0
    assert maximize([1.0, 0.0], np.zeros((0, 2)), []).status is LpStatus.UNBOUNDED


def test_degenerate_cycling_example_terminates():
    # a classical cycling example for the largest-coefficient rule; z = (1, 0, 1, 0) is optimal
    G = np.array([
        [0.25, -8.0, -1.0, 9.0],
        [0.5, -12.0, -0.5, 3.0],
        [0.0, 0.0, 1.0, 0.0],
        *(-np.eye(4)),
    ])
    g = np.array([0.0, 0.0, 1.0, 0, 0, 0, 0])
    c = np.array([0.75, -20.0, 0.5, -6.0])
    assert maximize(c, G, g).value == pytest.approx(1.25, abs=1e-12)


def test_redundant_equal_rows_and_validation():
    G = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    out = maximize([1.0, 1.0], G, [1.0, 1.0, 2.0, 0.0])
    assert out.value == pytest.approx(3.0)
    with pytest.raises(ValueError):
        LinearProgram([1.0], np.ones((2, 2)), [1.0, 1.0])
    with pytest.raises(ValueError):
        LinearProgram([np.nan], np.ones((1, 1)), [1.0])
    with pytest.raises(ValueError):
        solve_lp(LinearProgram([1.0], np.ones((1, 1)), [1.0]), "interior")


@pytest.mark.parametrize("case", ["1", "2"])
def test_degenerate_lifted_redundancy_lp(case):
    # redundancy LPs from the aircraft admissible-set build on which rounding
    # made Bland's rule cycle; case 2 still cycles without tableau refactorization
    from pathlib import Path

    data = np.load(Path(__file__).parent / "data" / "degenerate_lp.npz")
    c, G, g = data["a" + case], data["G" + case], data["g" + case]
    ours, ref = maximize(c, G, g), maximize(c, G, g, "highs")
    assert ours.optimal and ours.value == pytest.approx(ref.value, abs=1e-7)

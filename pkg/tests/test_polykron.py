import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from polyrg.polykron import (
    PowerLift,
    commute_merge_matrix,
    compression_matrix,
    eval_power,
    expansion_matrix,
    kron_power,
    mixed_basis,
    power_basis,
    shift_merge_matrix,
    sigma,
    stack_powers,
    step_compression,
)

vectors = st.integers(1, 4).flatmap(
    lambda n: st.lists(st.floats(-3, 3, allow_nan=False), min_size=n, max_size=n))


@pytest.mark.parametrize("n", range(1, 6))
@pytest.mark.parametrize("p", range(0, 6))
def test_sigma_matches_enumeration(n, p):
    count = sum(1 for _ in itertools.combinations_with_replacement(range(n), p))
    assert sigma(n, p) == count == len(power_basis(n, p))


def test_sigma_rejects_bad_input_and_overflow():
    with pytest.raises(ValueError):
        sigma(0, 2)
    with pytest.raises(OverflowError):
        sigma(200, 200)


def test_two_variable_degree_two_order():
    assert [m.exponents for m in power_basis(2, 2).monomials] == [(2, 0), (1, 1), (0, 2)]
    assert np.allclose(eval_power([2.0, 3.0], power_basis(2, 2)), [4.0, 6.0, 9.0])


@pytest.mark.parametrize("n,p", [(2, 3), (3, 2), (4, 3)])
def test_basis_is_sorted_descending(n, p):
    ex = [m.exponents for m in power_basis(n, p).monomials]
    assert ex == sorted(ex, reverse=True)
    assert len(set(ex)) == len(ex)


@given(vectors, st.integers(1, 3))
def test_kron_power_matches_repeated_kron(x, p):
    ref = np.array([1.0])
    for _ in range(p):
        ref = np.kron(ref, np.array(x))
    assert np.allclose(kron_power(x, p), ref)


@given(vectors, st.integers(1, 4))
@settings(max_examples=60)
def test_expansion_and_compression_round_trip(x, p):
    basis = power_basis(len(x), p)
    xp = eval_power(x, basis)
    full = kron_power(x, p)
    assert np.allclose(expansion_matrix(basis) @ xp, full, rtol=1e-12, atol=1e-12)
    assert np.allclose(compression_matrix(basis) @ full, xp, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("n", range(1, 5))
@pytest.mark.parametrize("p", range(1, 5))
def test_compression_after_expansion_is_identity(n, p):
    b = power_basis(n, p)
    prod = (compression_matrix(b) @ expansion_matrix(b)).toarray()
    assert np.array_equal(prod, np.eye(len(b)))


def test_expansion_rows_have_single_one():
    Me = expansion_matrix(power_basis(3, 3)).toarray()
    assert np.all(Me.sum(axis=1) == 1) and set(np.unique(Me)) <= {0.0, 1.0}


@given(st.integers(1, 3), st.integers(1, 2), st.data())
@settings(max_examples=40)
def test_commute_merge_identity(n_x, n_w, data):
    j = data.draw(st.integers(1, 3))
    i = data.draw(st.integers(0, j - 1))
    x = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n_x, max_size=n_x)))
    w = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n_w, max_size=n_w)))
    lhs = np.kron(w, np.kron(eval_power(x, power_basis(n_x, i)), eval_power(w, power_basis(n_w, j - 1 - i))))
    rhs = commute_merge_matrix(i, j, n_x, n_w) @ mixed_basis(power_basis(n_x, i), power_basis(n_w, j - i)).evaluate(x, w)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 2), st.integers(0, 2), st.data())
@settings(max_examples=40)
def test_shift_merge_identity(n_x, n_w, i, q, data):
    x = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n_x, max_size=n_x)))
    w = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n_w, max_size=n_w)))
    inner = np.kron(eval_power(x, power_basis(n_x, i)), eval_power(w, power_basis(n_w, q)))
    target = np.kron(eval_power(x, power_basis(n_x, i + 1)), eval_power(w, power_basis(n_w, q)))
    assert np.allclose(np.kron(x, inner), shift_merge_matrix(i, q, n_x, n_w) @ target, atol=1e-12)


@given(vectors, st.integers(2, 4))
def test_step_compression(x, j):
    x = np.array(x)
    prod = np.kron(x, eval_power(x, power_basis(len(x), j - 1)))
    assert np.allclose(step_compression(len(x), j) @ prod, eval_power(x, power_basis(len(x), j)), atol=1e-12)


def test_commute_merge_rejects_bad_indices():
    with pytest.raises(ValueError):
        commute_merge_matrix(2, 2, 1, 1)


def test_batch_evaluation_matches_rows():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 3))
    b = power_basis(3, 3)
    assert np.allclose(eval_power(X, b), np.array([eval_power(r, b) for r in X]))
    with pytest.raises(ValueError):
        eval_power(X[:, :2], b)


class TestPowerLift:
    def test_transform_and_names(self):
        X = np.array([[1.0, 2.0], [3.0, -1.0]])
        lift = PowerLift(degree=2).fit(X)
        assert lift.n_output_features_ == 5
        assert np.allclose(lift.transform(X), stack_powers(X, 2))
        assert list(lift.get_feature_names_out(["a", "b"])) == ["a", "b", "a^2", "a b", "b^2"]
        assert lift.ordering_id == "grlex-desc/n=2/p=2"

    def test_estimator_contract(self):
        lift = PowerLift(degree=3)
        assert clone(lift).get_params() == {"degree": 3}
        with pytest.raises(ValueError):
            PowerLift(degree=0).fit(np.zeros((1, 2)))
        fitted = PowerLift(degree=2).fit(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            fitted.transform(np.zeros((1, 3)))

    def test_degree_one_is_identity(self):
        X = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(PowerLift(degree=1).fit_transform(X), X)

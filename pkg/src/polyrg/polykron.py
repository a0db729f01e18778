"""Monomial bases, Kronecker powers and the structural matrices between them.

Power vectors are ordered graded-lexicographically with exponent tuples sorted
in decreasing order, so for two variables and degree two the basis reads
``[x1**2, x1*x2, x2**2]``.  Every basis carries an ordering id that is written
into exported files.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

ORDERING = "grlex-desc"

# sigma() refuses results that would not fit a signed 64-bit index.
_MAX_COUNT = 2**63 - 1


def sigma(n: int, p: int) -> int:
    """Number of distinct monomials of degree ``p`` in ``n`` variables."""
    if n < 1 or p < 0:
        raise ValueError(f"sigma needs n >= 1 and p >= 0, got n={n}, p={p}")
    count = math.comb(n + p - 1, p)
    if count > _MAX_COUNT:
        raise OverflowError(f"sigma({n}, {p}) = {count} exceeds the index range")
    return count


@dataclass(frozen=True)
class Monomial:
    exponents: tuple[int, ...]

    def __post_init__(self):
        if any(e < 0 for e in self.exponents):
            raise ValueError(f"negative exponent in {self.exponents}")

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __call__(self, x) -> float:
        return float(np.prod(np.asarray(x, dtype=float) ** np.asarray(self.exponents)))


def _exponent_tuples(n: int, p: int):
    if n == 1:
        yield (p,)
        return
    for first in range(p, -1, -1):
        for rest in _exponent_tuples(n - 1, p - first):
            yield (first,) + rest


@dataclass(frozen=True)
class PowerBasis:
    """Ordered degree-``p`` monomials in ``n`` variables."""

    n: int
    p: int
    monomials: tuple[Monomial, ...] = field(repr=False)
    position_of: dict = field(repr=False, compare=False, hash=False)

    def __len__(self):
        return len(self.monomials)

    @property
    def exponents(self) -> np.ndarray:
        """Exponent matrix, one row per monomial."""
        return _exponent_matrix(self.n, self.p)

    @property
    def ordering_id(self) -> str:
        return f"{ORDERING}/n={self.n}/p={self.p}"


@lru_cache(maxsize=None)
def power_basis(n: int, p: int) -> PowerBasis:
    count = sigma(n, p)
    monos = tuple(Monomial(e) for e in _exponent_tuples(n, p))
    assert len(monos) == count
    return PowerBasis(n, p, monos, {m.exponents: k for k, m in enumerate(monos)})


@lru_cache(maxsize=None)
def _exponent_matrix(n: int, p: int) -> np.ndarray:
    E = np.array([m.exponents for m in power_basis(n, p).monomials], dtype=np.int64)
    E = E.reshape(len(E), n)
    E.setflags(write=False)
    return E


def kron_power(x, p: int) -> np.ndarray:
    """Repetition-bearing Kronecker power ``x ⊗ x ⊗ ... ⊗ x``."""
    if p < 1:
        raise ValueError("kron_power needs p >= 1")
    x = np.asarray(x, dtype=float).ravel()
    out = x
    for _ in range(p - 1):
        out = np.kron(x, out)
    return out


def eval_power(x, basis: PowerBasis) -> np.ndarray:
    """Evaluate the power vector of ``x`` (or of each row of a 2-D ``x``)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != basis.n:
        raise ValueError(f"expected {basis.n} variables, got {x.shape[-1]}")
    E = basis.exponents
    if x.ndim == 1:
        return np.prod(x[None, :] ** E, axis=1)
    return np.prod(x[:, None, :] ** E[None, :, :], axis=2)


@lru_cache(maxsize=None)
def _kron_positions(n: int, p: int) -> np.ndarray:
    """Monomial index of every slot of ``x^{p⊗}``."""
    basis = power_basis(n, p)
    idx = np.empty(n**p, dtype=np.int64)
    # slot order matches np.kron: the first factor is the most significant digit
    for slot, digits in enumerate(itertools.product(range(n), repeat=p)):
        e = [0] * n
        for d in digits:
            e[d] += 1
        idx[slot] = basis.position_of[tuple(e)]
    return idx


def expansion_matrix(basis: PowerBasis) -> sp.csr_matrix:
    """``M_e`` with ``x^{p⊗} = M_e x^p``."""
    if basis.p == 0:
        return sp.csr_matrix(np.ones((1, 1)))
    cols = _kron_positions(basis.n, basis.p)
    rows = np.arange(len(cols))
    return sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(len(cols), len(basis)))


def compression_matrix(basis: PowerBasis) -> sp.csr_matrix:
    """``M_c`` with ``x^p = M_c x^{p⊗}``, selecting first occurrences."""
    if basis.p == 0:
        return sp.csr_matrix(np.ones((1, 1)))
    slots = _kron_positions(basis.n, basis.p)
    _, first = np.unique(slots, return_index=True)
    return sp.csr_matrix(
        (np.ones(len(first)), (np.arange(len(first)), first)),
        shape=(len(basis), len(slots)),
    )


@dataclass(frozen=True)
class MixedBasis:
    """Ordered products ``a^p ⊗ b^q``; index ``(i, j) -> i * len(b) + j``."""

    left: PowerBasis
    right: PowerBasis

    def __len__(self):
        return len(self.left) * len(self.right)

    def index(self, i: int, j: int) -> int:
        return i * len(self.right) + j

    def pairs(self):
        return itertools.product(self.left.monomials, self.right.monomials)

    def evaluate(self, a, b) -> np.ndarray:
        return np.kron(eval_power(a, self.left), eval_power(b, self.right))


def mixed_basis(basis_a: PowerBasis, basis_b: PowerBasis) -> MixedBasis:
    return MixedBasis(basis_a, basis_b)


# A product vector is described by its factors, each a (group, degree) pair with
# group 0 for x and 1 for w.  The target is the mixed basis x^i ⊗ w^q.
def _product_map(factors: Sequence[tuple[int, int]], target: tuple[int, int],
                 n_x: int, n_w: int) -> np.ndarray:
    dims = (n_x, n_w)
    target_x = power_basis(n_x, target[0])
    target_w = power_basis(n_w, target[1])
    factor_bases = [power_basis(dims[g], d) for g, d in factors]
    total = math.prod(len(b) for b in factor_bases)
    out = np.zeros((total, len(target_x) * len(target_w)))
    for row, combo in enumerate(itertools.product(*(b.monomials for b in factor_bases))):
        ex = np.zeros(n_x, dtype=np.int64)
        ew = np.zeros(n_w, dtype=np.int64)
        for (g, _), mono in zip(factors, combo):
            if g == 0:
                ex += mono.exponents
            else:
                ew += mono.exponents
        try:
            col = (target_x.position_of[tuple(ex)] * len(target_w)
                   + target_w.position_of[tuple(ew)])
        except KeyError:
            raise ValueError(f"factor degrees {factors} do not match target {target}") from None
        out[row, col] = 1.0
    return out


def product_compression(rows: np.ndarray) -> np.ndarray:
    """Left inverse of a product map built by first-occurrence selection."""
    sel = np.zeros(rows.shape[::-1])
    seen = set()
    for r, c in zip(*np.nonzero(rows)):
        if c not in seen:
            seen.add(c)
            sel[c, r] = 1.0
    return sel


@lru_cache(maxsize=None)
def commute_merge_matrix(i: int, j: int, n_x: int, n_w: int) -> np.ndarray:
    """Matrix ``Γ`` with ``w ⊗ (x^i w^{j-1-i}) = Γ (x^i w^{j-i})``."""
    if not (j >= 1 and 0 <= i <= j - 1):
        raise ValueError(f"need 0 <= i <= j-1, got i={i}, j={j}")
    G = _product_map([(1, 1), (0, i), (1, j - 1 - i)], (i, j - i), n_x, n_w)
    G.setflags(write=False)
    return G


@lru_cache(maxsize=None)
def shift_merge_matrix(i: int, q: int, n_x: int, n_w: int) -> np.ndarray:
    """Matrix ``T`` with ``x ⊗ (x^i w^q) = T (x^{i+1} w^q)``."""
    T = _product_map([(0, 1), (0, i), (1, q)], (i + 1, q), n_x, n_w)
    T.setflags(write=False)
    return T


@lru_cache(maxsize=None)
def step_compression(n: int, j: int) -> np.ndarray:
    """Matrix ``S`` with ``x^j = S (x ⊗ x^{j-1})``."""
    S = product_compression(_product_map([(0, 1), (0, j - 1)], (j, 0), n, 1))
    S.setflags(write=False)
    return S


def stacked_dims(n: int, p: int) -> list[int]:
    return [sigma(n, j) for j in range(1, p + 1)]


def stack_powers(x, p: int) -> np.ndarray:
    """``[x, x^2, ..., x^p]`` for a vector or row-wise for a matrix."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    return np.concatenate([eval_power(x, power_basis(n, j)) for j in range(1, p + 1)], axis=-1)


class PowerLift(TransformerMixin, BaseEstimator):
    """Map rows of ``X`` to their stacked monomial powers up to ``degree``.

    Parameters
    ----------
    degree : int
        Highest power kept.  ``degree=1`` returns the input unchanged.
    """

    def __init__(self, degree=2):
        self.degree = degree

    def fit(self, X, y=None):
        X = check_array(X)
        if int(self.degree) < 1:
            raise ValueError("degree must be >= 1")
        self.n_features_in_ = X.shape[1]
        self.dims_ = stacked_dims(self.n_features_in_, int(self.degree))
        self.n_output_features_ = sum(self.dims_)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_output_features_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return stack_powers(X, int(self.degree))

    @property
    def ordering_id(self) -> str:
        check_is_fitted(self, "n_output_features_")
        return f"{ORDERING}/n={self.n_features_in_}/p={int(self.degree)}"

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "n_output_features_")
        if input_features is None:
            input_features = [f"x{k}" for k in range(self.n_features_in_)]
        names = []
        for j in range(1, int(self.degree) + 1):
            for mono in power_basis(self.n_features_in_, j).monomials:
                parts = [f if e == 1 else f"{f}^{e}"
                         for f, e in zip(input_features, mono.exponents) if e]
                names.append(" ".join(parts))
        return np.asarray(names, dtype=object)

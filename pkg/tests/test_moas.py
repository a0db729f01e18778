import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyrg.lift import (
    PolyConstraint,
    ProblemSpec,
    Term,
    assemble_extended,
    build_blocks,
    instantiate_vertices,
    lift_constraints,
)
from polyrg.moas import (
    Box,
    MoasError,
    NotFinitelyDetermined,
    Polytope,
    RobustMOAS,
    RowTag,
    TightenedInfeasible,
    UnboundedSet,
    compute_linear_moas,
    contains,
    extract_box,
    interiorize,
    interval_mul,
    interval_power,
    is_redundant,
    lift_box,
    omega_w,
    remove_redundant,
    resolve_eps,
)
from polyrg.polykron import stack_powers

from conftest import brute_force_lp

interval = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(sorted)


def _scalar_rows():
    return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])


def test_contracting_scalar_terminates_immediately():
    res = compute_linear_moas([[0.5]], [[0.0]], _scalar_rows(), [[0.0, 0.0]])
    assert res.t_star == 0
    assert sorted(res.polytope.G.ravel()) == [-1.0, 1.0]
    assert np.allclose(res.polytope.g, 1.0)


@pytest.mark.parametrize("w", [0.0, 0.03])
def test_rotation_against_definition(w):
    # membership oracle: H A^t z <= h - sum_{s<t} supp(H A^s B_w) for t up to 300
    A = 0.95 * np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
    B_w = np.array([[1.0], [0.0]])
    H = np.array([[1.0, 0.0], [-1.0, 0.0]])
    h = np.array([1.0, 1.0])
    res = compute_linear_moas(A, B_w, (H, h), [[-w, w]], eps=0.0)
    rows, rhs, tight, At = [], [], np.zeros(2), np.eye(2)
    for _ in range(300):
        rows.append(H @ At)
        rhs.append(h - tight)
        tight = tight + w * np.abs(H @ At @ B_w).ravel()
        At = A @ At
    rows, rhs = np.vstack(rows), np.concatenate(rhs)
    rng = np.random.default_rng(0)
    for z in rng.uniform(-2, 2, size=(500, 2)):
        margin = np.max(rows @ z - rhs)
        if abs(margin) > 1e-6:
            assert res.polytope.contains(z, tol=0) == (margin < 0)


def test_scalar_disturbance_keeps_step_zero_rows():
    res = compute_linear_moas([[0.5]], [[1.0]], _scalar_rows(), [[-0.2, 0.2]], eps=0.0)
    assert res.t_star == 0
    assert np.allclose(extract_box(res.polytope).upper, 1.0)


def test_resolve_eps():
    H, h = np.array([[2.0], [-1.0]]), np.array([4.0, 1.0])
    assert resolve_eps(None, H, h, False) == 0.0
    assert resolve_eps(None, H, h, True) == pytest.approx(2e-6)
    assert resolve_eps("auto", H, h, False) == pytest.approx(2e-6)
    assert resolve_eps(0.5, H, h, True) == 0.5
    with pytest.raises(ValueError):
        resolve_eps(-1.0, H, h, True)


class TestBoxes:
    def test_extract_box(self):
        assert np.allclose(extract_box(Polytope(*_scalar_rows())).lower, [-1])
        simplex = Polytope(np.array([[-1.0, 0], [0, -1.0], [1.0, 1.0]]), np.array([0, 0, 2.0]))
        box = extract_box(simplex)
        assert np.allclose(box.lower, 0) and np.allclose(box.upper, 2)
        with pytest.raises(UnboundedSet):
            extract_box(Polytope(np.array([[1.0]]), np.array([1.0])))

    def test_interval_examples(self):
        assert interval_power(-1, 2, 2) == (0.0, 4.0)
        assert interval_mul((1, 2), (-1, 1)) == (-2, 2)
        assert omega_w(Box([-1.0], [1.0]), [[0.0, 0.0]], 3).is_zero

    @given(interval, st.integers(0, 5))
    def test_interval_power_against_sampling(self, iv, e):
        lo, hi = interval_power(iv[0], iv[1], e)
        xs = np.linspace(iv[0], iv[1], 201)
        vals = xs**e
        assert lo <= vals.min() + 1e-12 and vals.max() <= hi + 1e-12
        assert min(abs(vals.min() - lo), abs(vals.max() - hi)) <= 1e-9 * max(1, abs(hi))

    @given(interval, interval)
    def test_interval_mul_four_corners(self, x, y):
        corners = [a * b for a in x for b in y]
        assert interval_mul(x, y) == (min(corners), max(corners))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_lifted_boxes_enclose_samples(self, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(-2, 1, 2)
        box = Box(lo, lo + rng.uniform(0, 2, 2))
        w = Box([-0.3], [0.5])
        lifted = lift_box(box, 3)
        om = omega_w(box, [[-0.3, 0.5]], 3)
        ext_layout = [(i, j - i) for j in range(1, 4) for i in range(j)]
        ext = assemble_extended(build_blocks(np.eye(2) * 0.5, np.ones((2, 1)), 3), 3)
        assert list(ext.layout) == ext_layout
        for z in box.sample(rng, 50):
            X = stack_powers(z, 3)
            assert np.all(X >= lifted.lower - 1e-12) and np.all(X <= lifted.upper + 1e-12)
            d = ext.disturbance_vector(z, w.sample(rng, 1)[0])
            assert np.all(d >= om.lower - 1e-12) and np.all(d <= om.upper + 1e-12)

    def test_interiorize_keeps_outer_bound(self):
        box = Box([-1.0, 0.0, 1e-9], [2.0, 4.0, 3.0])
        out = interiorize(box, keep=1)
        assert out.lower[0] == -1.0 and out.upper[0] == 2.0
        assert np.all(out.lower[1:] < 0) and np.all(out.upper[1:] >= box.upper[1:])

    def test_box_validation(self):
        with pytest.raises(ValueError):
            Box([1.0], [0.0])
        with pytest.raises(ValueError):
            Box([0.0], [np.inf])


class TestPolytope:
    def test_membership_and_redundancy(self):
        P = Polytope(*_scalar_rows())
        assert contains(P, [0.0])
        assert is_redundant(np.array([1.0]), 2.0, P)
        assert not is_redundant(np.array([1.0]), 0.5, P)

    @pytest.mark.parametrize("seed", range(10))
    def test_redundancy_matches_vertex_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        G = np.vstack([np.eye(2), -np.eye(2)])
        g = rng.uniform(0.5, 2, 4)
        P = Polytope(G, g)
        row, rhs = rng.normal(size=2), rng.uniform(-1, 2)
        best = brute_force_lp(row, G, g)
        assert is_redundant(row, rhs, P) == (best <= rhs + 1e-7)

    def test_remove_redundant_keeps_the_set(self):
        rng = np.random.default_rng(1)
        G = rng.normal(size=(30, 2))
        G /= np.linalg.norm(G, axis=1, keepdims=True)
        P = Polytope(G, rng.uniform(1, 3, 30))
        Q = remove_redundant(P)
        assert len(Q) < len(P)
        pts = rng.uniform(-2, 2, size=(500, 2))
        assert np.array_equal(P.contains(pts, tol=0), Q.contains(pts, tol=0))
        # every kept row is needed: dropping it enlarges the set
        for k in range(len(Q)):
            others = Q.subset([i for i in range(len(Q)) if i != k])
            assert not is_redundant(Q.G[k], Q.g[k], others)

    def test_text_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        P = Polytope(rng.normal(size=(5, 3)), rng.uniform(size=5),
                     [RowTag("c1", t, t % 2) for t in range(5)], "grlex-desc/n=3/p=1")
        path = tmp_path / "p.poly"
        P.save(path)
        Q = Polytope.load(path)
        assert np.array_equal(P.G, Q.G) and np.array_equal(P.g, Q.g)
        assert Q.tags == P.tags and Q.ordering == P.ordering
        assert Q.to_text() == P.to_text()

    def test_rejects_silent_infeasibility(self):
        with pytest.raises(TightenedInfeasible):
            Polytope(np.zeros((1, 2)), np.array([-1.0]))
        with pytest.raises(ValueError):
            Polytope.from_text("dim 1\nordering -\nrows 2\n1 | 1 | c:t=0:v=0\n")


def _toy_spec(p=2, disturbed=False, theta=True):
    n, nt = 2, 1 if theta else 0
    cons = [PolyConstraint.from_terms(1.0, [Term(s, (1, 0))], n, nt, p, f"x{s:+.0f}") for s in (1.0, -1.0)]
    if p >= 2:
        cons.append(PolyConstraint.from_terms(0.8, [Term(1.0, (2, 0), 0 if theta else None),
                                                    Term(0.5, (1, 1))], n, nt, p, "quad"))
    return ProblemSpec([[0.6]], [[0.4]], [[1.0]] if disturbed else [[0.0]], 0.9, p, tuple(cons),
                       [[0.5, 1.5]] if theta else np.zeros((0, 2)),
                       [[-0.02, 0.02]] if disturbed else [[0.0, 0.0]], "toy")


def test_degree_one_robust_set_equals_linear_set():
    spec = _toy_spec(p=1, theta=False)
    est = RobustMOAS().fit(spec)
    lin = compute_linear_moas(est.extended_.phi11, est.extended_.phi10,
                              (np.array([[1.0, 0], [-1.0, 0]]), np.ones(2)), spec.w_box)
    assert est.report()["single_stage"]
    assert est.result_.t_star == lin.t_star
    assert np.allclose(est.polytope_.G, lin.polytope.G) and np.allclose(est.polytope_.g, lin.polytope.g)


@pytest.mark.parametrize("disturbed", [False, True])
def test_robust_set_is_invariant_and_safe(disturbed):
    spec = _toy_spec(disturbed=disturbed)
    est = RobustMOAS(eps="auto").fit(spec)
    P, ext = est.polytope_, est.extended_
    rng = np.random.default_rng(4)
    box = est.box_
    pts = [z for z in box.sample(rng, 4000) if P.contains(ext.embed(z), tol=0)]
    assert len(pts) > 50
    thetas = np.linspace(0.5, 1.5, 7)
    for z in pts[:200]:
        for _ in range(20):
            w = rng.uniform(*spec.w_box[0], size=1)
            assert all(c.evaluate(z, [th]) <= c.h + 1e-9 for c in spec.constraints for th in thetas)
            z = ext.phi11 @ z + ext.phi10 @ w
            assert P.contains(ext.embed(z), tol=1e-7)


def test_report_and_monotone_growth():
    spec = _toy_spec(disturbed=True)
    est = RobustMOAS(eps="auto").fit(spec)
    rep = est.report()
    assert rep["theta_vertices"] == 2 and not rep["single_stage"]
    assert rep["robust"]["rows_after_pruning"] <= rep["robust"]["rows_before_pruning"]
    assert est.result_.iterations == est.result_.t_star + 1
    # all time-0 vertex rows are implied by the final set
    lifted = lift_constraints(spec)
    for C, Hk in instantiate_vertices(lifted, lifted.theta_box):
        for r in range(len(Hk)):
            assert is_redundant(C[r] / np.linalg.norm(C[r]), Hk[r] / np.linalg.norm(C[r]), est.polytope_)


def test_empty_rows_rejected():
    with pytest.raises(ValueError):
        compute_linear_moas([[0.5]], [[0.0]], (np.zeros((0, 1)), np.zeros(0)), [[0.0, 0.0]])
    with pytest.raises(MoasError):
        RobustMOAS().fit(ProblemSpec([[0.5]], [[0.5]], [[0.0]], 0.9, 2, (
            PolyConstraint.from_terms(1.0, [Term(1.0, (2, 0))], 2, 0, 2),), np.zeros((0, 2)), [[0, 0]]))

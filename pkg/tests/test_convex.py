import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qvhi.convex import (Box, GroupL1Ball, HalfSpace, Intersection, NormBall, RadialConstraintFamily,
                         SeminormBall, SeparableConvex, WholeSpace, box_set, composite_prox,
                         constraint_set_at, project_weighted_group_l1_ball, separable_metric_prox)
from qvhi.errors import ProblemDataError
from qvhi.hilbert import GramSpace


def random_spd(rng, n, lo=0.5, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * rng.uniform(lo, hi, n)) @ Q.T


def brute_metric_prox(G, x, tau, l1, quad, lower, upper):
    # independent oracle: generic bounded minimization of the prox objective
    from scipy.optimize import minimize
    n = len(x)
    l1 = np.broadcast_to(l1, (n,))
    quad = np.broadcast_to(quad, (n,))

    def obj(z):
        d = z - x
        return 0.5 * d @ G @ d + tau * (l1 @ np.abs(z) + 0.5 * quad @ z ** 2)

    bounds = list(zip(np.broadcast_to(lower, (n,)), np.broadcast_to(upper, (n,))))
    best = None
    for start in (np.clip(x, *np.array(bounds).T), np.zeros(n)):
        res = minimize(obj, np.clip(start, *np.array(bounds).T), method="Powell", bounds=bounds,
                       options={"xtol": 1e-12, "ftol": 1e-15, "maxiter": 200000})
        if best is None or res.fun < best.fun:
            best = res
    return best.x, best.fun


# ---------------------------------------------------------------------------
# examples

def test_ambient_ball_examples():
    V = GramSpace.identity(2)
    K = RadialConstraintFamily(V, lambda v: 1.0, 1.0)
    w = np.array([2.0, 0.0])
    assert np.allclose(constraint_set_at(K, np.zeros(2)).project(w), w / 2)
    w = np.array([0.3, 0.4])
    assert np.allclose(K.at(np.zeros(2)).project(w), w)


def test_l1_ball_example():
    V = GramSpace.identity(2)
    K = RadialConstraintFamily(V, lambda v: 1.0, 1.0, r_kind="weighted-l1", D=np.eye(2))
    assert np.allclose(K.at(np.zeros(2)).project([2.0, 0.0]), [1.0, 0.0], atol=1e-8)


def test_composite_prox_examples():
    V2 = GramSpace.identity(2)
    assert np.allclose(composite_prox(SeparableConvex(V2), Box(V2, 0.0, 1.0), [2.0, -1.0], 1.0), [1, 0])
    V1 = GramSpace.identity(1)
    assert np.allclose(composite_prox(SeparableConvex(V1, l1=1.0), WholeSpace(V1), [3.0], 1.0), [2.0])
    assert np.allclose(composite_prox(SeparableConvex(V1, l1=1.0), Box(V1, 0.0, 0.5), [3.0], 1.0), [0.5])


def test_box_examples():
    I2 = GramSpace.identity(2)
    assert np.allclose(box_set(I2, upper=[1, 1]).project([3, 0]), [1, 0])
    D = GramSpace(np.diag([2.0, 1.0]))
    assert np.allclose(box_set(D, upper=[1, 1]).project([3, 0]), [1, 0])
    G = GramSpace(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(box_set(G, upper=[1, 1]).project([3, 3]), [1, 1], atol=1e-10)


def test_box_rejects_empty():
    with pytest.raises(ProblemDataError):
        Box(GramSpace.identity(2), lower=[1, 0], upper=[0, 1])


def test_constraint_set_at_rejects_negative_radius():
    K = RadialConstraintFamily(GramSpace.identity(2), lambda v: -1.0, 1.0)
    with pytest.raises(ProblemDataError):
        K.at(np.zeros(2))
    with pytest.raises(ProblemDataError):
        RadialConstraintFamily(GramSpace.identity(2), lambda v: 1.0, 0.0)


# ---------------------------------------------------------------------------
# metric prox against a brute-force minimizer

@pytest.mark.parametrize("seed", range(6))
def test_separable_metric_prox_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 3
    G = random_spd(rng, n)
    x = 2 * rng.standard_normal(n)
    l1 = rng.uniform(0, 1, n)
    quad = rng.uniform(0, 1, n)
    lower = np.where(rng.uniform(size=n) < 0.5, -np.inf, -0.5)
    upper = np.where(rng.uniform(size=n) < 0.5, np.inf, 0.5)
    z = separable_metric_prox(GramSpace(G), x, 0.7, l1, quad, lower, upper)
    z_ref, f_ref = brute_metric_prox(G, x, 0.7, l1, quad, lower, upper)
    d = z - x
    f = 0.5 * d @ G @ d + 0.7 * (l1 @ np.abs(z) + 0.5 * quad @ z ** 2)
    assert np.all(z >= lower - 1e-12) and np.all(z <= upper + 1e-12)
    assert f <= f_ref + 1e-9
    assert np.allclose(z, z_ref, atol=1e-4)


def test_prox_optimality_against_samples():
    rng = np.random.default_rng(11)
    V = GramSpace(random_spd(rng, 4))
    phi = SeparableConvex(V, l1=0.3, quad=0.2)
    E = Intersection([Box(V, -1.0, 1.0), NormBall(V, 1.5)])
    tau, eps = 0.8, 1e-9
    for _ in range(5):
        x = 3 * rng.standard_normal(4)
        z = composite_prox(phi, E, x, tau, eps)
        assert E.contains(z, 1e-7)
        obj = lambda y: phi(y) + 0.5 * V.norm(y - x) ** 2 / tau
        base = obj(z)
        samples = [E.project(2 * rng.standard_normal(4)) for _ in range(50)]
        assert all(base <= obj(y) + 1e-6 for y in samples)


# ---------------------------------------------------------------------------
# projections: characterization, idempotence, nonexpansiveness

def make_sets(rng, n):
    V = GramSpace(random_spd(rng, n))
    D = rng.standard_normal((n, n))
    return V, [
        Box(V, -0.5, 0.7),
        NormBall(V, 0.8),
        HalfSpace(V, rng.standard_normal(n), 0.3),
        SeminormBall(V, D, 0.6),
        GroupL1Ball(V, D, np.ones(n), 0.9),
        Intersection([Box(V, -0.5, 0.5), NormBall(V, 0.6)]),
    ]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_projection_characterization(seed):
    rng = np.random.default_rng(seed)
    V, sets = make_sets(rng, 3)
    eps = 1e-9
    for E in sets:
        x = 3 * rng.standard_normal(3)
        z = E.project(x, eps)
        assert E.contains(z, 1e-6)
        assert V.norm(E.project(z, eps) - z) <= 1e-6
        for _ in range(10):
            y = E.project(3 * rng.standard_normal(3), eps)
            assert V.inner(x - z, y - z) <= 1e-6 * (1 + V.norm(y - z))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_prox_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    V = GramSpace(random_spd(rng, 3))
    phi = SeparableConvex(V, l1=rng.uniform(0, 1, 3), quad=rng.uniform(0, 1, 3))
    E = Box(V, -0.4, 0.9)
    x1, x2 = 2 * rng.standard_normal((2, 3))
    eps = 1e-10
    p1, p2 = (composite_prox(phi, E, x, 0.5, eps) for x in (x1, x2))
    assert V.norm(p1 - p2) <= V.norm(x1 - x2) + 2e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_radial_family_r_properties(seed, lam):
    rng = np.random.default_rng(seed)
    V = GramSpace(random_spd(rng, 4))
    D = rng.standard_normal((4, 4))
    fams = [RadialConstraintFamily(V, lambda v: 1.0 + np.abs(v).sum(), 1.0),
            RadialConstraintFamily(V, lambda v: 1.0, 1.0, "seminorm-l2", D),
            RadialConstraintFamily(V, lambda v: 1.0, 1.0, "weighted-l1", D, np.array([1.0, 2.0]), 2)]
    u, v = rng.standard_normal((2, 4))
    for K in fams:
        assert K.r(lam * u) == pytest.approx(lam * K.r(u), rel=1e-10)
        assert K.r(u + v) <= K.r(u) + K.r(v) + 1e-12
        assert K.r(np.zeros(4)) <= K.rho
        assert K.m(v) >= K.rho
        assert np.allclose(K.r_many(np.stack([u, v])), [K.r(u), K.r(v)])
        z = K.at(v).project(3 * rng.standard_normal(4), 1e-9)
        assert K.r(z) <= K.m(v) + 1e-7


def test_ambient_projection_scales_with_m():
    V = GramSpace(np.diag([1.0, 4.0]))
    w = np.array([3.0, 2.0])
    p1 = RadialConstraintFamily(V, lambda v: 1.0, 1.0).at(0).project(w)
    p2 = RadialConstraintFamily(V, lambda v: 2.0, 1.0).at(0).project(w)
    assert np.allclose(p2, 2 * p1)


def test_group_l1_projection_matches_sorting_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        y = rng.standard_normal(6)
        w = rng.uniform(0.5, 2, 6)
        p = project_weighted_group_l1_ball(y, w, 1.0)
        # brute force: weighted soft threshold at the lambda solving sum w|p| = 1
        from scipy.optimize import brentq
        if w @ np.abs(y) <= 1:
            ref = y
        else:
            g = lambda lam: w @ np.maximum(np.abs(y) - lam * w, 0) - 1.0
            lam = brentq(g, 0, np.max(np.abs(y) / w))
            ref = np.sign(y) * np.maximum(np.abs(y) - lam * w, 0)
        assert np.allclose(p, ref, atol=1e-10)


def test_contains_many_matches_contains():
    rng = np.random.default_rng(2)
    V, sets = make_sets(rng, 3)
    Z = rng.standard_normal((40, 3))
    for E in sets + [WholeSpace(V)]:
        assert np.array_equal(E.contains_many(Z), np.array([E.contains(z) for z in Z]))


def test_prox_rejects_nonpositive_step():
    V = GramSpace.identity(1)
    with pytest.raises(ProblemDataError):
        composite_prox(SeparableConvex(V), WholeSpace(V), [1.0], 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_smooth_prox_over_ball_matches_constrained_minimizer(seed):
    from scipy.optimize import minimize
    rng = np.random.default_rng(seed)
    G = random_spd(rng, 3)
    V = GramSpace(G)
    quad = rng.uniform(0, 1, 3)
    center = 0.2 * rng.standard_normal(3)
    E = NormBall(V, 0.5, center)
    x = 3 * rng.standard_normal(3)
    z = composite_prox(SeparableConvex(V, quad=quad), E, x, 0.6)
    obj = lambda y: 0.5 * (y - x) @ G @ (y - x) + 0.3 * quad @ y ** 2
    con = {"type": "ineq", "fun": lambda y: 0.25 - (y - center) @ G @ (y - center)}
    ref = minimize(obj, center, constraints=[con], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert E.contains(z, 1e-10)
    assert obj(z) <= ref.fun + 1e-8
    assert np.allclose(z, ref.x, atol=1e-5)

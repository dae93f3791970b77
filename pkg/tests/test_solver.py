import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qvhi.clarke import SuperpositionFunctional, j0_directional, named_potential
from qvhi.convex import Box, NormBall, RadialConstraintFamily, SeparableConvex, WholeSpace
from qvhi.errors import ProblemDataError
from qvhi.hilbert import GramSpace, LinearMap, linear_operator
from qvhi.problems.synthetic import synthetic_instance
from qvhi.solver import (OuterConfig, QVHIProblem, a_priori_bounds, auxiliary_solve, brute_force_qvhi,
                         check_smallness, qvhi_residual, sample_constraint_points, sample_solution_set,
                         solve_qvhi, verify_inequality, zero_superposition)
from qvhi.vi import VIInstance, VISolverConfig, solve_vi

CFG = OuterConfig(tol_outer=1e-10)


def scalar_problem(f=0.5, potential="zero", K=None, a=1.0, M=1.0, scale=1.0, C=None, phi_l1=0.0,
                   alpha=None, beta=None):
    V = GramSpace.identity(1)
    X = GramSpace.diagonal([1.0])
    h = named_potential(potential)
    if scale != 1.0:
        h = h.scaled(scale)
    return QVHIProblem(linear_operator(V, np.array([[a]])), SeparableConvex(V, l1=phi_l1),
                       SuperpositionFunctional(h, [1.0], X), LinearMap(np.array([[M]]), V, X),
                       np.array([f]), WholeSpace(V) if K is None else K, C=C, alpha=alpha, beta=beta)


# ---------------------------------------------------------------------------
# smallness and bounds

def test_smallness_examples():
    assert check_smallness(scalar_problem(potential="remark43", a=0.01))[0]
    ok, margin = check_smallness(scalar_problem(potential="smooth-quad"))
    assert not ok and margin == pytest.approx(0.0)
    ok, margin = check_smallness(scalar_problem(potential="smooth-quad", scale=0.5))
    assert ok and margin == pytest.approx(0.5)


def test_smallness_violation_fails_fast():
    P = scalar_problem(potential="smooth-quad", scale=2.0)
    with pytest.raises(ProblemDataError, match="smallness"):
        solve_qvhi(P, CFG)


def test_bounds_examples():
    b = a_priori_bounds(scalar_problem(f=0.0))
    assert (b.c1, b.c2, b.R1) == (0.0, 0.0, 0.0)
    b = a_priori_bounds(scalar_problem(f=0.0, potential="abs"))
    assert b.c1 == pytest.approx(1.0) and b.c2 == 0.0 and b.R1 == pytest.approx(1.0)
    assert b.R2 == pytest.approx(1.0) and b.R == pytest.approx(1.0)


def test_bounds_formula_oracle():
    # independent recomputation with a nonzero anchor
    P = scalar_problem(f=2.0, potential="smooth-quad", scale=0.3, a=2.0, M=1.5, phi_l1=0.7)
    z0 = np.array([0.4])
    b = a_priori_bounds(P, z0)
    m, beta, Mn, alpha = 2.0, 0.3, 1.5, 0.0
    l, bb = P.phi.minorant
    l = float(np.broadcast_to(l, (1,))[0])
    c1 = 2.0 * 0.4 + 2.0 + alpha * Mn + abs(l) + beta * Mn ** 2 * 0.4
    c2 = 0.7 * 0.4 + abs(l) * 0.4 + abs(bb)
    gap = m - beta * Mn ** 2
    R1 = 0.4 + np.sqrt((c1 / gap) ** 2 + 2 * c2 / gap)
    assert (b.c1, b.c2, b.R1) == pytest.approx((c1, c2, R1))
    assert b.R2 == pytest.approx(Mn * b.R1) and b.R == pytest.approx(alpha + beta * b.R2)
    assert b.R1 >= np.linalg.norm(z0)


# ---------------------------------------------------------------------------
# auxiliary solve

def test_auxiliary_examples():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((3, 3))
    S = G @ G.T + 3 * np.eye(3)
    V = GramSpace.identity(3)
    X = GramSpace.diagonal(np.ones(3))
    f = rng.standard_normal(3)
    P = QVHIProblem(linear_operator(V, S), SeparableConvex(V), zero_superposition(X),
                    LinearMap(np.eye(3), V, X), f, WholeSpace(V))
    vi = VISolverConfig(tol=1e-12)
    assert np.allclose(auxiliary_solve(P, np.zeros(3), np.zeros(3), vi).u, np.linalg.solve(S, f), atol=1e-10)
    P1 = scalar_problem(f=0.3)
    assert auxiliary_solve(P1, [0.0], [0.2], vi).u == pytest.approx([0.1], abs=1e-11)
    K = RadialConstraintFamily(V, lambda v: 1.0 + abs(v[0]), 1.0)
    P2 = QVHIProblem(linear_operator(V, np.eye(3)), SeparableConvex(V), zero_superposition(X),
                     LinearMap(np.eye(3), V, X), np.array([3.0, 4.0, 0.0]), K)
    u = auxiliary_solve(P2, np.array([1.0, 0, 0]), np.zeros(3), vi).u
    assert np.allclose(u, np.array([3.0, 4.0, 0.0]) * 2 / 5, atol=1e-10)


# ---------------------------------------------------------------------------
# hand-solved instances

def test_remark43_scalar_solution():
    P = scalar_problem(f=0.5, potential="remark43")
    s = solve_qvhi(P, CFG)
    assert s.converged
    assert s.u == pytest.approx([0.25], abs=1e-9) and s.w == pytest.approx([0.25], abs=1e-9)
    res = qvhi_residual(P, s.u, s.w)
    assert res.fp <= 2e-9 and res.feas <= 1e-12 and res.subgrad_ok


def test_constraint_family_scalar_solution():
    V = GramSpace.identity(1)
    K = RadialConstraintFamily(V, lambda v: 1.0 + abs(v[0]) / 2, 1.0)
    P = scalar_problem(f=2.0, K=K)
    s = solve_qvhi(P, CFG)
    assert s.converged and s.u == pytest.approx([2.0], abs=1e-8)


def test_special_case_collapse():
    for seed in range(3):
        base = synthetic_instance(3, seed)
        E = NormBall(base.space, 0.7)
        P = QVHIProblem(base.A, base.phi, zero_superposition(base.X), base.M, base.f, E)
        s = solve_qvhi(P, OuterConfig(tol_outer=1e-11, vi_cfg=VISolverConfig(tol=1e-12)))
        ref = solve_vi(VIInstance(base.A, base.phi, E, base.f), VISolverConfig(tol=1e-12))
        assert s.converged and base.space.norm(s.u - ref.u) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_synthetic_certificates(seed):
    P = synthetic_instance(2 + seed % 2, seed)
    s = solve_qvhi(P, CFG)
    assert s.converged and not s.truncation_active
    assert P.space.norm(s.u) <= s.bounds.R1 + 1e-9
    res = qvhi_residual(P, s.u, s.w)
    assert res.fp <= 1e-8 and res.feas <= 1e-7 and res.subgrad_ok
    Z = sample_constraint_points(P, s.u, 2000, seed)
    assert np.array_equal(Z[0], s.u)
    rep = verify_inequality(P, s.u, Z)
    assert rep.passed
    assert verify_inequality(P, s.u, s.u[None, :]).min_value == pytest.approx(0.0, abs=1e-14)


def test_d_invariance_of_iterates():
    for seed in range(3):
        P = synthetic_instance(3, seed)
        s = solve_qvhi(P, CFG)
        for _, _, nv, nw, _ in s.history:
            assert nv <= s.bounds.R1 + 1e-9 and nw <= s.bounds.R + 1e-9


def test_subgradient_admissibility_on_directions():
    P = scalar_problem(f=1.0, potential="remark43")  # solution at the kink r = 1
    s = solve_qvhi(P, CFG)
    assert s.converged and s.u == pytest.approx([1.0], abs=1e-8)
    rng = np.random.default_rng(0)
    Mu = P.M(s.u)
    for d in rng.standard_normal((1000, 1)):
        assert P.X.inner(s.w, d) <= j0_directional(P.j, Mu, d) + 1e-12


def test_residual_detects_non_solution():
    P = scalar_problem(f=0.5, potential="remark43")
    res = qvhi_residual(P, np.array([0.6]), np.array([0.6]))
    assert res.fp > 0.1 and res.subgrad_ok
    assert not qvhi_residual(P, np.array([0.6]), np.array([0.2])).subgrad_ok
    zero = scalar_problem(f=0.0, potential="remark43")
    res = qvhi_residual(zero, np.zeros(1), np.zeros(1))
    assert res.fp == 0.0 and res.feas == 0.0 and res.subgrad_ok


def test_inequality_rejects_empty_samples():
    P = scalar_problem()
    with pytest.raises(ProblemDataError):
        verify_inequality(P, np.zeros(1), np.empty((0, 1)))


def test_outer_config_validation():
    with pytest.raises(ProblemDataError):
        OuterConfig(damping=0.0)
    with pytest.raises(ProblemDataError):
        OuterConfig(selection="largest")


def test_validation_rejects_zero_outside_C():
    P = scalar_problem(C=Box(GramSpace.identity(1), 1.0, 2.0))
    with pytest.raises(ProblemDataError):
        a_priori_bounds(P)


# ---------------------------------------------------------------------------
# brute-force oracle and solution sets

def test_brute_force_scalar():
    P = scalar_problem(f=0.5, potential="remark43")
    R1 = a_priori_bounds(P).R1
    res = brute_force_qvhi(P, 1e-3, 1e-2, (-R1 - 0.1, R1 + 0.1))
    reps = res.representatives
    assert reps.shape == (1, 1) and abs(reps[0, 0] - 0.25) <= 2e-3


def test_brute_force_matches_vi_when_j_vanishes():
    V = GramSpace.identity(1)
    P = scalar_problem(f=3.0, K=Box(V, -1.0, 0.6))
    ref = solve_vi(VIInstance(P.A, P.phi, P.K, P.f), VISolverConfig(tol=1e-12)).u
    R1 = a_priori_bounds(P).R1
    reps = brute_force_qvhi(P, 1e-3, 1e-2, (-R1 - 0.1, R1 + 0.1)).representatives
    assert reps.shape == (1, 1) and abs(reps[0, 0] - ref[0]) <= 2e-3


def test_brute_force_empty_grid_diagnostic():
    P = scalar_problem(f=0.5, potential="remark43")
    res = brute_force_qvhi(P, 1e-3, 1e-2, (5.0, 6.0))
    assert res.clusters == [] and res.diagnostic


def test_brute_force_rejects_dim3():
    with pytest.raises(ProblemDataError):
        brute_force_qvhi(synthetic_instance(3, 0), 0.1, 0.1, (-1, 1))


def test_sample_unique_instance():
    P = synthetic_instance(2, 4)
    out = sample_solution_set(P, CFG, n_starts=5, seed=1)
    assert len(out.solutions) == 1 and out.bound_audit_ok and not out.failures
    one = sample_solution_set(P, CFG, n_starts=1, seed=1)
    assert len(one.solutions) <= 1


def test_sample_multistable_instance():
    P = synthetic_instance(1, 0, "multistable")
    out = sample_solution_set(P, CFG, n_starts=12, seed=0)
    found = sorted(round(float(s.u[0]), 6) for s in out.solutions)
    assert set(found) <= {0.75, 1.0, 1.5} and {0.75, 1.5} <= set(found)
    assert out.bound_audit_ok


def test_sampling_is_thread_independent():
    P = synthetic_instance(2, 3)
    a = sample_solution_set(P, CFG, n_starts=3, seed=3, threads=1)
    b = sample_solution_set(P, CFG, n_starts=3, seed=3, threads=3)
    for ra, rb in zip(a.runs, b.runs):
        assert np.array_equal(ra.u, rb.u)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3))
def test_remark43_scalar_stationarity(f):
    # oracle: u solves u - f + zeta = 0 with zeta in the Clarke interval at u
    P = scalar_problem(f=f, potential="remark43")
    s = solve_qvhi(P, CFG)
    if not s.converged:
        return
    u = s.u[0]
    lo, hi = named_potential("remark43").interval(u)
    assert lo - 1e-8 <= f - u <= hi + 1e-8

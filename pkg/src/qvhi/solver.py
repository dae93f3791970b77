"""Quasi-variational-hemivariational inequalities.

Find ``u`` in ``C`` with ``u`` in ``K(u)`` and

    <A u - f, z - u> + phi(z) - phi(u) + j0(M u; M z - M u) >= 0

for every ``z`` in ``K(u)``.  The existence argument behind these problems
is a set-valued fixed point of

    Lambda(v, w) = (p(v, w), F(M p(v, w))),

where ``p(v, w)`` solves the convex inequality with data ``f - M* w`` on
``K(v)`` and ``F`` is the Clarke subdifferential of ``j`` composed with a
radial retraction.  The solver here iterates a damped single-valued
selection of ``Lambda``; that iteration has no convergence guarantee, so
failures are reported rather than hidden.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .clarke import (SELECTION_RULES, SuperpositionFunctional, named_potential,
                     subgradient_select, truncated_F)
from .convex import (ConstraintSet, ConvexFunction, Intersection, RadialConstraintFamily,
                     SeparableConvex, WholeSpace, constraint_set_at)
from .errors import ConvergenceError, ProblemDataError
from .hilbert import GramSpace, LinearMap, NonlinearOperator
from .vi import VIInstance, VISolverConfig, sample_feasible, solve_vi, vi_residual

__all__ = [
    "QVHIProblem",
    "APrioriBounds",
    "OuterConfig",
    "QVHISolution",
    "QVHIResidual",
    "InequalityReport",
    "Cluster",
    "BruteForceResult",
    "SolutionSetSample",
    "check_smallness",
    "a_priori_bounds",
    "auxiliary_solve",
    "solve_qvhi",
    "qvhi_residual",
    "verify_inequality",
    "sample_constraint_points",
    "brute_force_qvhi",
    "sample_solution_set",
    "zero_superposition",
]

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "outer_residual", "norm_v", "norm_w_X", "feasibility")


def zero_superposition(X: GramSpace) -> SuperpositionFunctional:
    """``j = 0`` on a lumped X-space."""
    return SuperpositionFunctional(named_potential("zero"), X.diag, X)


@dataclass(frozen=True)
class QVHIProblem:
    """Data of the inequality.

    ``K`` is either a :class:`RadialConstraintFamily` or a fixed
    :class:`ConstraintSet`.  ``alpha`` and ``beta`` default to the sharp
    growth constants of ``j``.  Construction only checks shapes; the
    hypotheses are checked by :meth:`validate`, which every solver calls.
    """

    A: NonlinearOperator
    phi: ConvexFunction
    j: SuperpositionFunctional
    M: LinearMap
    f: np.ndarray
    K: Union[RadialConstraintFamily, ConstraintSet]
    C: Optional[ConstraintSet] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    name: str = "qvhi"
    M_norm: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        V = self.A.space
        if self.M.domain.dim != V.dim or self.phi.space.dim != V.dim or self.K.space.dim != V.dim:
            raise ProblemDataError("A, phi, K and M must share the space V")
        if self.M.codomain.dim != self.j.space.dim:
            raise ProblemDataError("M must map into the X-space of j")
        object.__setattr__(self, "f", V.check(self.f, "f"))
        if self.C is None:
            object.__setattr__(self, "C", WholeSpace(V))
        a, b = self.j.growth_constants(sharp=True)
        if self.alpha is None:
            object.__setattr__(self, "alpha", a)
        if self.beta is None:
            object.__setattr__(self, "beta", b)
        if self.alpha < 0 or self.beta < 0:
            raise ProblemDataError("growth constants must be nonnegative")
        if not np.isfinite(self.M_norm):
            object.__setattr__(self, "M_norm", self.M.operator_norm())

    @property
    def space(self) -> GramSpace:
        return self.A.space

    @property
    def X(self) -> GramSpace:
        return self.j.space

    @property
    def radial(self) -> bool:
        return isinstance(self.K, RadialConstraintFamily)

    def set_at(self, v) -> ConstraintSet:
        """``K(v)`` intersected with ``C``."""
        E = constraint_set_at(self.K, v) if self.radial else self.K
        if isinstance(self.C, WholeSpace):
            return E
        return Intersection([E, self.C])

    def feasibility(self, u) -> float:
        """Violation of ``u in K(u)`` and ``u in C`` (0 when feasible)."""
        if self.radial:
            viol = max(self.K.r(u) - float(self.K.m(u)), 0.0)
        else:
            viol = self.K.distance(u)
        if not isinstance(self.C, WholeSpace):
            viol = max(viol, self.C.distance(u))
        return float(viol)

    def validate(self, n_samples: int = 20, seed: int = 0) -> None:
        """Fail fast on smallness, missing minorant or an infeasible anchor ``0``."""
        ok, margin = check_smallness(self)
        if not ok:
            raise ProblemDataError(
                f"smallness condition (H0) m > beta ||M||^2 fails: margin {margin:.6g}")
        if self.phi.minorant is None:
            raise ProblemDataError("phi needs an affine minorant (l, b) for the a-priori bounds")
        zero = np.zeros(self.space.dim)
        if not self.C.contains(zero):
            raise ProblemDataError("0 must lie in C")
        if self.radial:
            rng = np.random.default_rng(seed)
            pts = rng.standard_normal((n_samples, self.space.dim))
            pts[0] = 0.0
            for v in pts:
                mv = float(self.K.m(v))
                if not np.isfinite(mv) or mv < self.K.r(zero):
                    raise ProblemDataError(f"0 is not in K(v) at a sampled v (m(v) = {mv})")
        elif not self.K.contains(zero):
            raise ProblemDataError("0 must lie in the fixed constraint set")


def check_smallness(P: QVHIProblem):
    """``(pass, margin)`` with ``margin = m - beta ||M||^2``."""
    margin = P.A.m_strong - P.beta * P.M_norm ** 2
    return bool(margin > 0), float(margin)


@dataclass(frozen=True)
class APrioriBounds:
    z0: np.ndarray
    c1: float
    c2: float
    R1: float
    R2: float
    R: float


def a_priori_bounds(P: QVHIProblem, z0=None) -> APrioriBounds:
    """Bounds ``||u|| <= R1``, ``||M u||_X <= R2`` and ``||w||_X <= R``.

    With ``gap = m - beta ||M||^2`` every solution satisfies
    ``gap ||u - z0||^2 <= c1 ||u - z0|| + c2``, so
    ``||u - z0|| <= sqrt((c1/gap)^2 + 2 c2/gap)``.
    """
    P.validate()
    V = P.space
    z0 = np.zeros(V.dim) if z0 is None else V.check(z0, "z0")
    l, b = P.phi.minorant
    l = np.broadcast_to(np.asarray(l, dtype=float), (V.dim,))
    nz0 = V.norm(z0)
    Mn = P.M_norm
    l_norm = V.dual_norm(l)
    c1 = (V.dual_norm(P.A(z0)) + V.dual_norm(P.f) + P.alpha * Mn + l_norm
          + P.beta * Mn ** 2 * nz0)
    c2 = abs(P.phi(z0)) + l_norm * nz0 + abs(float(b))
    gap = check_smallness(P)[1]
    # the elementary bound extended to zero data by continuity
    R1 = nz0 + float(np.sqrt((c1 / gap) ** 2 + 2.0 * c2 / gap))
    R2 = Mn * R1
    return APrioriBounds(z0, float(c1), float(c2), R1, R2, float(P.alpha + P.beta * R2))


@dataclass(frozen=True)
class OuterConfig:
    damping: float = 0.5
    tol_outer: float = 1e-9
    max_outer: int = 2000
    selection: str = "min-norm"
    vi_cfg: VISolverConfig = VISolverConfig()
    multistart: int = 3
    seed: int = 0
    window: int = 20
    eps_feas: float = 1e-7

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ProblemDataError("damping must lie in (0, 1]")
        if self.selection not in SELECTION_RULES:
            raise ProblemDataError(f"unknown selection rule {self.selection!r}")
        if self.tol_outer <= 0 or self.max_outer < 1 or self.multistart < 1:
            raise ProblemDataError("need tol_outer > 0, max_outer >= 1, multistart >= 1")


@dataclass
class QVHISolution:
    u: np.ndarray
    w: np.ndarray
    outer_residual: float
    constraint_residual: float
    truncation_active: bool
    bounds: APrioriBounds
    converged: bool
    iterations: int = 0
    attempts: int = 0
    history: list = field(default_factory=list)

    def summary(self) -> str:
        b = self.bounds
        return (f"converged={self.converged} iterations={self.iterations} attempts={self.attempts} "
                f"outer_residual={self.outer_residual:.3e} feasibility={self.constraint_residual:.3e} "
                f"R1={b.R1:.6g} R2={b.R2:.6g} R={b.R:.6g}")


def auxiliary_solve(P: QVHIProblem, v, w, vi_cfg: VISolverConfig = VISolverConfig(), u0=None):
    """Solve the convex inequality on ``K(v) ∩ C`` with data ``f - M* w``."""
    inst = VIInstance(P.A, P.phi, P.set_at(v), P.f - P.M.adjoint_apply(w))
    sol = solve_vi(inst, vi_cfg, u0=u0)
    if not sol.converged:
        raise ConvergenceError("inner VI did not converge", sol.fp_residual, sol.iterations)
    return sol


def _clip(space: GramSpace, x, radius: float):
    n = space.norm(x)
    if n <= radius:
        return x
    return x * (radius / n) if n > 0 else x


def _random_start(P: QVHIProblem, bounds: APrioriBounds, rng):
    V, X = P.space, P.X
    v = rng.standard_normal(V.dim)
    v = _clip(V, v * bounds.R1 * rng.uniform() / max(V.norm(v), 1e-300), bounds.R1)
    v = P.C.project(v)
    w = rng.standard_normal(X.dim)
    w = _clip(X, w * bounds.R * rng.uniform() / max(X.norm(w), 1e-300), bounds.R)
    return v, w


def _run_attempt(P, cfg, bounds, v, w, theta, k0):
    V, X = P.space, P.X
    R2 = max(bounds.R2, 1e-300)
    steps, rows = [], []
    best = (np.inf, v, w)
    for k in range(cfg.max_outer):
        u = auxiliary_solve(P, v, w, cfg.vi_cfg, u0=v).u
        Mu = P.M(u)
        w_new = truncated_F(P.j, Mu, R2, cfg.selection, d_opt=Mu - P.M(v))
        w_next = (1.0 - theta) * w + theta * w_new
        step = V.norm(u - v) + X.norm(w_next - w)
        feas = P.feasibility(u)
        rows.append((k0 + k + 1, step, V.norm(u), X.norm(w_next), feas))
        steps.append(step)
        v, w = u, w_next
        if step < best[0]:
            best = (step, u, w_next)
        if step <= cfg.tol_outer:
            return True, v, w, step, rows
        n = cfg.window
        if len(steps) >= 2 * n and min(steps[-n:]) >= 0.999 * min(steps[:-n]):
            log.info("outer iteration stalled after %d steps (residual %.3e)", len(steps), step)
            break
    return False, best[1], best[2], best[0], rows


def solve_qvhi(P: QVHIProblem, cfg: OuterConfig = OuterConfig(), v0=None, w0=None) -> QVHISolution:
    """Damped fixed-point iteration on the truncated map with restarts.

    Each attempt iterates ``u = p(v, w)``, ``w <- (1 - theta) w + theta F(M u)``,
    ``v <- u`` until the step ``||dv||_V + ||dw||_X`` drops below
    ``tol_outer``.  A stall over ``cfg.window`` iterations restarts from a
    random point of the bounded domain with half the damping.  A result is
    marked converged only when the step test passes, ``u`` is feasible for
    ``K(u) ∩ C`` and the truncation is inactive, in which case the returned
    ``w`` is an exact selection of the Clarke subdifferential at ``M u``.
    """
    bounds = a_priori_bounds(P)
    V, X = P.space, P.X
    v = np.zeros(V.dim) if v0 is None else _clip(V, V.check(v0, "v0"), bounds.R1)
    w = np.zeros(X.dim) if w0 is None else _clip(X, X.check(w0, "w0"), bounds.R)
    rng = np.random.default_rng(cfg.seed)
    history = []
    theta = cfg.damping
    best = None
    for attempt in range(1, cfg.multistart + 1):
        ok, u, w_it, step, rows = _run_attempt(P, cfg, bounds, v, w, theta, len(history))
        history.extend(rows)
        Mu = P.M(u)
        trunc = X.norm(Mu) > bounds.R2 + cfg.tol_outer
        if ok:
            # with the truncation inactive, a fresh selection at M u is an exact subgradient
            w_cert = w_it if trunc else subgradient_select(P.j, Mu, cfg.selection, d_opt=np.zeros(X.dim))
            feas = P.feasibility(u)
            sol = QVHISolution(u, w_cert, step, feas, trunc, bounds,
                               bool(feas <= cfg.eps_feas and not trunc),
                               len(history), attempt, history)
            if sol.converged:
                log.info("converged on attempt %d after %d iterations (step %.3e)", attempt, len(history), step)
                return sol
            log.info("attempt %d stopped but certificate failed (feas %.3e, truncation %s)",
                     attempt, feas, trunc)
        if best is None or step < best[0]:
            best = (step, u, w_it, trunc)
        theta *= 0.5
        v, w = _random_start(P, bounds, rng)
    step, u, w_it, trunc = best
    log.warning("solve_qvhi did not converge after %d attempts (best step %.3e)", cfg.multistart, step)
    return QVHISolution(u, w_it, step, P.feasibility(u), trunc, bounds, False,
                        len(history), cfg.multistart, history)


@dataclass(frozen=True)
class QVHIResidual:
    fp: float
    feas: float
    subgrad_ok: bool


def qvhi_residual(P: QVHIProblem, u, w, tau_probe: float = 1.0, eps_inner: float = 1e-12,
                  subgrad_tol: float = 1e-10) -> QVHIResidual:
    """Certificate for the subgradient form of the problem.

    ``fp`` is the prox residual of the convex inequality on ``K(u) ∩ C`` with
    data ``f - M* w``, ``feas`` the violation of ``u in K(u) ∩ C`` and
    ``subgrad_ok`` tells whether ``w`` lies in the nodal Clarke intervals at
    ``M u``.
    """
    V = P.space
    u = V.check(u)
    w = P.X.check(w, "w")
    feas = P.feasibility(u)
    try:
        E = P.set_at(u)
    except ProblemDataError:
        return QVHIResidual(float("inf"), feas, False)
    inst = VIInstance(P.A, P.phi, E, P.f - P.M.adjoint_apply(w))
    fp = vi_residual(inst, u, tau_probe, eps_inner)
    lo, hi = P.j.intervals(P.M(u))
    ok = bool(np.all(w >= lo - subgrad_tol) and np.all(w <= hi + subgrad_tol))
    return QVHIResidual(float(fp), feas, ok)


@dataclass
class InequalityReport:
    min_value: float
    slack: float
    n_samples: int
    argmin: np.ndarray

    @property
    def passed(self) -> bool:
        return self.min_value >= -self.slack


def _phi_many(phi, Z):
    if isinstance(phi, SeparableConvex):
        return phi.value_many(Z)
    return np.array([phi(z) for z in Z])


def _inequality_values(P: QVHIProblem, u, Z):
    D = Z - u
    Mmat = P.M.matrix
    MD = np.asarray((Mmat @ D.T).T)
    return (D @ (P.A(u) - P.f) + _phi_many(P.phi, Z) - P.phi(u)
            + P.j.j0(P.M(u), MD))


def sample_constraint_points(P: QVHIProblem, u, n: int, seed: int = 0, radius=None):
    """Points of ``K(u) ∩ C``, including ``u`` itself as the first row."""
    rng = np.random.default_rng(seed)
    if radius is None:
        radius = 1.5 * max(a_priori_bounds(P).R1, 1.0)
    Z = sample_feasible(P.set_at(u), max(n - 1, 1), radius, rng, anchor=np.asarray(u, dtype=float))
    return np.vstack([u, Z])[:n]


def verify_inequality(P: QVHIProblem, u, z_samples, slack: float = 1e-6) -> InequalityReport:
    """Minimum of the full hemivariational expression over the given points."""
    Z = np.atleast_2d(np.asarray(z_samples, dtype=float))
    if Z.shape[0] == 0:
        raise ProblemDataError("verify_inequality needs at least one sample")
    u = P.space.check(u)
    vals = _inequality_values(P, u, Z)
    k = int(np.argmin(vals))
    return InequalityReport(float(vals[k]), slack, Z.shape[0], Z[k].copy())


# ---------------------------------------------------------------------------
# brute-force oracle for dim <= 2


@dataclass
class Cluster:
    representative: np.ndarray
    score: float
    size: int
    lower: np.ndarray
    upper: np.ndarray
    points: np.ndarray = field(default=None, repr=False)

    def distance(self, space: GramSpace, u) -> float:
        """V-distance from ``u`` to the nearest member of the cluster."""
        D = self.points - np.asarray(u, dtype=float)
        return float(np.min([space.norm(x) for x in D]))


@dataclass
class BruteForceResult:
    clusters: list
    diagnostic: str = ""
    n_evaluated: int = 0
    spacing: float = float("nan")

    @property
    def representatives(self) -> np.ndarray:
        if not self.clusters:
            return np.empty((0, 0))
        return np.array([c.representative for c in self.clusters])


def _lipschitz_sample(fun, lo, hi, space, rng, n=300):
    a = rng.uniform(lo, hi, size=(n, lo.size))
    b = rng.uniform(lo, hi, size=(n, lo.size))
    best = 0.0
    for x, y in zip(a, b):
        d = space.norm(x - y)
        if d > 1e-12:
            best = max(best, abs(fun(x) - fun(y)) / d)
    return 1.5 * best


def brute_force_qvhi(P: QVHIProblem, u_grid_spacing: float, z_grid_spacing: float, box,
                     kappa: float = 2.0, coarse_points: int = 64, stencil: int = 3,
                     chunk_elems: int = 2_000_000) -> BruteForceResult:
    """Grid oracle for the solution set on a box.

    A grid point ``u`` survives when it is feasible up to the grid tolerance
    and the inequality, evaluated over a global ``z``-grid plus a local
    stencil inside ``K(u) ∩ C``, is nowhere below ``-eps(u, z)``.  The
    tolerance is ``kappa * delta`` times a Lipschitz bound of the
    inequality in ``u``, with ``delta`` the distance from a grid point to
    the nearest true solution.  The scan runs coarse to fine, refining
    around survivors, and the final survivors are clustered by adjacency.
    The representative of a cluster is, among its exactly feasible members,
    the one with the largest ``min_z value(z) / ||z - u||_V``, a first-order
    slack that vanishes only at solutions.  A cluster without feasible
    members is represented by its least infeasible point.
    """
    V = P.space
    d = V.dim
    if d > 2:
        raise ProblemDataError("brute_force_qvhi supports dim <= 2 only")
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (d,)).copy() for b in box)
    if np.any(hi <= lo):
        raise ProblemDataError("box needs lower < upper")
    h, hz = float(u_grid_spacing), float(z_grid_spacing)
    if h <= 0 or hz <= 0:
        raise ProblemDataError("grid spacings must be positive")
    notes = []
    bounds = a_priori_bounds(P)
    G = V.gram.toarray() if sp.issparse(V.gram) else np.asarray(V.gram)
    Ginv_diag = np.diag(np.linalg.inv(G))
    reach = bounds.R1 * np.sqrt(Ginv_diag)
    if np.any(lo > -reach) or np.any(hi < reach):
        notes.append("box does not contain the R1 ball")
    gmax = float(np.sqrt(np.linalg.eigvalsh(G)[-1]))
    Mmat = P.M.matrix.toarray() if sp.issparse(P.M.matrix) else np.asarray(P.M.matrix)
    wts = P.j.weights
    rng = np.random.default_rng(0)

    Mn = P.M_norm
    L_A = P.A.lipschitz
    L_phi = P.phi.lipschitz
    if L_phi is None:
        L_phi = _lipschitz_sample(P.phi, lo, hi, V, rng)
    L_m = _lipschitz_sample(lambda x: float(P.K.m(x)), lo, hi, V, rng) if P.radial else 0.0
    slope = L_A + P.j.curvature() * Mn ** 2

    G_chol = np.linalg.cholesky(G)

    def norms_V(D):
        return np.linalg.norm(D @ G_chol, axis=-1)

    def member(Z, radius_of_u=None):
        if P.radial:
            ok = P.K.r_many(Z) <= (radius_of_u if radius_of_u is not None else np.inf)
        else:
            ok = P.K.contains_many(Z, 0.0)
        if not isinstance(P.C, WholeSpace):
            ok &= P.C.contains_many(Z, 0.0)
        return ok

    axes = [np.arange(lo[i], hi[i] + 0.5 * hz, hz) for i in range(d)]
    Zg = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    Zg = Zg[member(Zg)] if not P.radial else Zg
    rZ = P.K.r_many(Zg) if P.radial else None
    if not isinstance(P.C, WholeSpace) and P.radial:
        keep = P.C.contains_many(Zg, 0.0)
        Zg, rZ = Zg[keep], rZ[keep]
    phiZ = _phi_many(P.phi, Zg)

    offs = np.stack(np.meshgrid(*[np.arange(-stencil, stencil + 1)] * d, indexing="ij"),
                    axis=-1).reshape(-1, d)
    offs = offs[np.any(offs != 0, axis=1)]

    def evaluate(U, s):
        delta = kappa * gmax * s * np.sqrt(d) / 2.0
        eps_feas = delta * (1.0 + L_m) + 1e-12
        mU = np.array([float(P.K.m(u)) for u in U]) if P.radial else None
        if P.radial:
            viol = np.maximum(P.K.r_many(U) - mU, 0.0)
            feas = viol <= eps_feas
        else:
            viol = np.where(P.K.contains_many(U, 0.0), 0.0, np.inf)
            feas = P.K.contains_many(U, eps_feas)
        if not isinstance(P.C, WholeSpace):
            feas &= P.C.contains_many(U, eps_feas)
            viol = np.where(P.C.contains_many(U, 0.0), viol, np.inf)
        score = np.full(U.shape[0], -np.inf)
        alive = np.zeros(U.shape[0], dtype=bool)
        idx = np.flatnonzero(feas)
        if idx.size == 0:
            return feas, alive, score, viol
        Uf = U[idx]
        if P.A.matrix is not None:
            grad = np.asarray(P.A.matrix @ Uf.T).T - P.f
        else:
            grad = np.array([P.A(u) for u in Uf]) - P.f
        phiU = _phi_many(P.phi, Uf)
        MU = Uf @ Mmat.T
        jlo, jhi = P.j.intervals(MU)
        base = delta * (np.array([V.dual_norm(g) for g in grad]) + L_phi
                        + Mn * (P.alpha + P.beta * np.sqrt((MU * MU) @ wts)))
        if P.radial:
            # no u on this level can use z with r(z) above the largest m(u)
            keep = rZ <= mU[idx].max()
            Zg_e, rZ_e, phiZ_e = Zg[keep], rZ[keep], phiZ[keep]
        else:
            Zg_e, rZ_e, phiZ_e = Zg, rZ, phiZ
        nz = Zg_e.shape[0] + offs.shape[0]
        chunk = max(1, chunk_elems // max(nz * max(d, Mmat.shape[0]), 1))
        for s0 in range(0, Uf.shape[0], chunk):
            sl = slice(s0, s0 + chunk)
            u_c = Uf[sl]
            Zl = u_c[:, None, :] + s * offs[None, :, :]
            Zall = np.concatenate([np.broadcast_to(Zg_e, (u_c.shape[0],) + Zg_e.shape), Zl], axis=1)
            if P.radial:
                rl = P.K.r_many(Zl.reshape(-1, d)).reshape(Zl.shape[:2])
                rall = np.concatenate([np.broadcast_to(rZ_e, (u_c.shape[0], rZ_e.size)), rl], axis=1)
                ok = rall <= mU[idx[sl]][:, None]
                if not isinstance(P.C, WholeSpace):
                    okl = P.C.contains_many(Zl.reshape(-1, d), 0.0).reshape(Zl.shape[:2])
                    ok[:, Zg_e.shape[0]:] &= okl
            else:
                okl = member(Zl.reshape(-1, d)).reshape(Zl.shape[:2])
                ok = np.concatenate([np.ones((u_c.shape[0], Zg_e.shape[0]), bool), okl], axis=1)
            phil = _phi_many(P.phi, Zl.reshape(-1, d)).reshape(Zl.shape[:2])
            phiall = np.concatenate([np.broadcast_to(phiZ_e, (u_c.shape[0], phiZ_e.size)), phil], axis=1)
            D = Zall - u_c[:, None, :]
            MD = D @ Mmat.T
            lo_c, hi_c = jlo[sl][:, None, :], jhi[sl][:, None, :]
            val = ((D @ grad[sl][:, :, None])[..., 0] + phiall - phiU[sl][:, None]
                   + np.maximum(lo_c * MD, hi_c * MD) @ wts)
            nD = norms_V(D)
            eps = base[sl][:, None] + delta * slope * nD
            val = np.where(ok, val, np.inf)
            slackv = np.where(ok, val + eps, np.inf)
            # val is convex along rays from u, so val / ||z - u|| on the stencil is a
            # first-order slack of order -m dist(u, solution); it ranks the survivors
            rate = np.where(nD > 0, val / np.where(nD > 0, nD, 1.0), np.inf)
            score[idx[sl]] = np.minimum(rate.min(axis=1), 0.0)
            alive[idx[sl]] = slackv.min(axis=1) >= 0.0
        return feas, alive, score, viol

    width = float(np.max(hi - lo))
    levels = [h]
    while width / levels[-1] > coarse_points:
        levels.append(levels[-1] * 4.0)
    levels.reverse()

    def grid_points(s):
        ax = [np.arange(lo[i], hi[i] + 0.5 * s, s) for i in range(d)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, d)

    U = grid_points(levels[0])
    n_eval = 0
    any_feasible = False
    for li, s in enumerate(levels):
        feas, alive, score, viol = evaluate(U, s)
        n_eval += U.shape[0]
        any_feasible |= bool(feas.any())
        S, sc, vi = U[alive], score[alive], viol[alive]
        if li == len(levels) - 1 or S.shape[0] == 0:
            break
        s_next = levels[li + 1]
        k = int(round(2 * s / s_next))
        rel = np.stack(np.meshgrid(*[np.arange(-k, k + 1)] * d, indexing="ij"), axis=-1).reshape(-1, d)
        base_idx = np.rint((S - lo) / s_next).astype(np.int64)
        cand = (base_idx[:, None, :] + rel[None, :, :]).reshape(-1, d)
        n_max = np.floor((hi - lo) / s_next + 1e-9).astype(np.int64)
        cand = cand[np.all((cand >= 0) & (cand <= n_max), axis=1)]
        cand = np.unique(cand, axis=0)
        U = lo + cand * s_next

    if not any_feasible:
        notes.append("no feasible grid point: r(u) > m(u) on the whole box")
        return BruteForceResult([], "; ".join(notes), n_eval, h)
    if S.shape[0] == 0:
        notes.append("no grid point passed the inequality test")
        return BruteForceResult([], "; ".join(notes), n_eval, h)

    tree = cKDTree(S)
    pairs = tree.query_pairs(1.5 * h * np.sqrt(d), output_type="ndarray")
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else
                        (np.empty(0), (np.empty(0, int), np.empty(0, int))), shape=(S.shape[0],) * 2)
    n_comp, labels = connected_components(adj, directed=False)
    clusters = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        # exactly feasible members first; survivors just outside an active constraint
        # all score 0, so the first-order slack alone cannot rank them
        exact = members[vi[members] == 0]
        if exact.size:
            best = exact[np.argmax(sc[exact])]
        else:
            best = members[np.lexsort((-sc[members], vi[members]))[0]]
        clusters.append(Cluster(S[best].copy(), float(sc[best]), members.size,
                                S[members].min(axis=0), S[members].max(axis=0), S[members].copy()))
    clusters.sort(key=lambda c: tuple(c.representative))
    return BruteForceResult(clusters, "; ".join(notes), n_eval, h)


# ---------------------------------------------------------------------------
# solution-set sampling


@dataclass
class SolutionSetSample:
    solutions: list
    diameter: float
    bound_audit_ok: bool
    n_starts: int
    failures: list = field(default_factory=list)
    runs: list = field(default_factory=list)


def sample_solution_set(P: QVHIProblem, cfg: OuterConfig = OuterConfig(), n_starts: int = 10,
                        seed: int = 0, threads: int = 1) -> SolutionSetSample:
    """Run the solver from random starts and deduplicate the converged outputs.

    Every start owns a child seed of ``seed``, so the result does not depend
    on the thread schedule.  Solutions closer than ``10 * tol_outer`` in V
    are merged.
    """
    if n_starts < 1:
        raise ProblemDataError("n_starts must be at least 1")
    bounds = a_priori_bounds(P)
    children = np.random.SeedSequence(seed).spawn(n_starts)

    def run(child):
        rng = np.random.default_rng(child)
        v0, w0 = _random_start(P, bounds, rng)
        sub = replace(cfg, seed=int(child.generate_state(1)[0]))
        try:
            return solve_qvhi(P, sub, v0, w0)
        except (ConvergenceError, ProblemDataError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(run, children))
    else:
        runs = [run(c) for c in children]
    V = P.space
    sols, failures = [], []
    for i, r in enumerate(runs):
        if isinstance(r, Exception) or not r.converged:
            failures.append((i, r if isinstance(r, Exception) else "not converged"))
            continue
        if all(V.norm(r.u - s.u) > 10 * cfg.tol_outer for s in sols):
            sols.append(r)
    diam = max((V.norm(a.u - b.u) for a in sols for b in sols), default=0.0)
    audit = all(V.norm(s.u) <= bounds.R1 + 1e-6 for s in sols)
    return SolutionSetSample(sols, float(diam), audit, n_starts, failures, runs)

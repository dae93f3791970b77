"""Variational inequalities of the first kind.

Find ``u`` in a closed convex set ``E`` with

    <A u - g, z - u> + phi(z) - phi(u) >= 0   for all z in E,

for a strongly monotone Lipschitz ``A``.  The solver is forward-backward
splitting in the V-metric, which contracts with factor
``sqrt(1 - 2 tau m + tau^2 L^2)`` for ``0 < tau < 2 m / L^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .convex import (Box, ConstraintSet, ConvexFunction, HalfSpace, NormBall,
                     SeparableConvex, composite_prox)
from .errors import ConvergenceError, ProblemDataError
from .hilbert import GramSpace, NonlinearOperator

__all__ = [
    "VIInstance",
    "VISolverConfig",
    "VISolution",
    "solve_vi",
    "vi_residual",
    "MintyReport",
    "minty_check",
    "sample_feasible",
    "PerturbationRecord",
    "perturbation_experiment",
    "elementary_bound",
    "shrinking_ball_family",
    "rhs_perturbation_family",
    "moving_box_family",
    "halfspace_cap_family",
    "contraction_factor",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VIInstance:
    A: NonlinearOperator
    phi: ConvexFunction
    E: ConstraintSet
    g: np.ndarray

    def __post_init__(self):
        space = self.A.space
        if self.phi.space.dim != space.dim or self.E.space.dim != space.dim:
            raise ProblemDataError("A, phi and E must live on the same space")
        object.__setattr__(self, "g", space.check(self.g, "right-hand side"))

    @property
    def space(self) -> GramSpace:
        return self.A.space


@dataclass(frozen=True)
class VISolverConfig:
    step: Union[float, str] = "auto"
    tol: float = 1e-10
    max_iter: int = 10_000
    eps_inner: float = 1e-12

    def tau(self, A: NonlinearOperator) -> float:
        m, L = A.m_strong, A.lipschitz
        if self.step == "auto":
            return m / L ** 2
        tau = float(self.step)
        if not 0.0 < tau < 2.0 * m / L ** 2:
            raise ProblemDataError(
                f"step {tau} outside the contraction range (0, {2 * m / L ** 2:.6g})"
            )
        return tau


def contraction_factor(A: NonlinearOperator, tau: float) -> float:
    m, L = A.m_strong, A.lipschitz
    return float(np.sqrt(max(1.0 - 2.0 * tau * m + tau * tau * L * L, 0.0)))


@dataclass
class VISolution:
    u: np.ndarray
    fp_residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    tau: float = float("nan")


def _fb_step(inst: VIInstance, u, tau, eps):
    x = u - tau * inst.space.riesz(inst.A(u) - inst.g)
    return composite_prox(inst.phi, inst.E, x, tau, eps)


def solve_vi(inst: VIInstance, cfg: VISolverConfig = VISolverConfig(), u0=None) -> VISolution:
    """Forward-backward iteration ``u+ = prox(u - tau R(A u - g))``.

    ``R`` is the Riesz map of the V-metric and ``prox`` the composite prox
    of ``phi`` plus the indicator of ``E``.  Stops once the fixed-point
    residual ``||u+ - u||_V / tau`` is at most ``cfg.tol``.
    """
    if inst.A.m_strong <= 0:
        raise ProblemDataError("solve_vi needs a strongly monotone operator (m_strong > 0)")
    tau = cfg.tau(inst.A)
    space = inst.space
    u = np.zeros(space.dim) if u0 is None else space.check(u0, "u0").copy()
    history = []
    for it in range(1, cfg.max_iter + 1):
        u_new = _fb_step(inst, u, tau, cfg.eps_inner)
        res = space.norm(u_new - u) / tau
        history.append(res)
        u = u_new
        if res <= cfg.tol:
            return VISolution(u, res, it, True, history, tau)
    log.warning("solve_vi stopped after %d iterations, residual %.3e", cfg.max_iter, history[-1])
    return VISolution(u, history[-1], cfg.max_iter, False, history, tau)


def vi_residual(inst: VIInstance, u, tau_probe: float = 1.0, eps_inner: float = 1e-12) -> float:
    """Prox fixed-point residual; zero (up to ``eps_inner``) exactly at the solution."""
    if tau_probe <= 0:
        raise ProblemDataError("tau_probe must be positive")
    u = inst.space.check(u)
    return inst.space.norm(u - _fb_step(inst, u, tau_probe, eps_inner)) / tau_probe


def _phi_many(phi: ConvexFunction, Z):
    if isinstance(phi, SeparableConvex):
        return phi.value_many(Z)
    return np.array([phi(z) for z in Z])


def sample_feasible(E: ConstraintSet, n: int, radius: float, rng, anchor=None, eps=1e-12):
    """Random points of ``E``: projections of random points, mixed toward ``anchor``.

    Half the samples are raw projections (these sit on the boundary when
    the draw is outside), the rest are convex combinations with ``anchor``,
    which stay in ``E`` when ``anchor`` does.
    """
    space = E.space
    pts = rng.standard_normal((n, space.dim))
    pts *= (radius * rng.uniform(size=n) ** (1.0 / space.dim))[:, None] / np.maximum(
        np.linalg.norm(pts, axis=1), 1e-300)[:, None]
    if anchor is not None:
        pts += anchor
    Z = np.array([E.project(p, eps) for p in pts])
    if anchor is not None:
        t = rng.uniform(size=n)
        t[: n // 2] = 1.0
        Z = anchor + t[:, None] * (Z - anchor)
    return Z


@dataclass
class MintyReport:
    min_form3: float
    min_form4: float
    slack: float
    n_samples: int

    @property
    def passed3(self) -> bool:
        return self.min_form3 >= -self.slack

    @property
    def passed4(self) -> bool:
        return self.min_form4 >= -self.slack


def minty_check(inst: VIInstance, u, z_samples, slack: float = 1e-8, member_tol: float = 1e-7) -> MintyReport:
    """Evaluate the direct and the Minty forms at ``u`` over feasible samples.

    Direct form:  <A u - g, z - u> + phi(z) - phi(u)
    Minty form:   <A z - g, z - u> + phi(z) - phi(u)
    For monotone ``A`` a solution makes both nonnegative.
    """
    u = inst.space.check(u)
    Z = np.atleast_2d(np.asarray(z_samples, dtype=float))
    inside = inst.E.contains_many(Z, member_tol)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise ProblemDataError(f"sample {bad} lies outside the constraint set")
    D = Z - u
    dphi = _phi_many(inst.phi, Z) - inst.phi(u)
    form3 = D @ (inst.A(u) - inst.g) + dphi
    AZ = np.array([inst.A(z) for z in Z])
    form4 = np.einsum("ij,ij->i", AZ - inst.g, D) + dphi
    return MintyReport(float(form3.min()), float(form4.min()), slack, Z.shape[0])


def elementary_bound(delta1: float, delta2: float) -> float:
    """``sqrt(delta1^2 + 2 delta2)``, a bound for ``x > 0`` with ``x^2 <= delta1 x + delta2``."""
    if delta1 <= 0 or delta2 <= 0:
        raise ProblemDataError("elementary_bound needs positive delta1 and delta2")
    return float(np.sqrt(delta1 * delta1 + 2.0 * delta2))


# ---------------------------------------------------------------------------
# perturbation families and the convergence experiment

Family = Callable[[int], tuple]


def shrinking_ball_family(space: GramSpace, g, radius: float = 1.0,
                          excess: Callable[[int], float] = lambda n: 1.0 / n) -> Family:
    """``E_n`` = V-ball of radius ``radius + excess(n)``, data fixed."""
    return lambda n: (NormBall(space, radius + excess(n)), np.asarray(g, dtype=float))


def rhs_perturbation_family(E: ConstraintSet, g, e) -> Family:
    """``g_n = g + e / n`` with ``E`` fixed."""
    g = np.asarray(g, dtype=float)
    e = np.asarray(e, dtype=float)
    return lambda n: (E, g + e / n)


def moving_box_family(space: GramSpace, g, lower, upper, shift) -> Family:
    """Boxes translated by ``shift / n``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    shift = np.asarray(shift, dtype=float)
    return lambda n: (Box(space, lower + shift / n, upper + shift / n), np.asarray(g, dtype=float))


def halfspace_cap_family(space: GramSpace, g, a, b: float,
                         excess: Callable[[int], float] = lambda n: 1.0 / n) -> Family:
    """Half-spaces ``a @ z <= b + excess(n)``."""
    return lambda n: (HalfSpace(space, a, b + excess(n)), np.asarray(g, dtype=float))


@dataclass
class PerturbationRecord:
    n: int
    error: float
    iterations: int
    residual: float
    recovery_distance: float = float("nan")
    a_priori_bound: float = float("nan")


def perturbation_experiment(base: VIInstance, family: Family, n_list: Sequence[int],
                            cfg: VISolverConfig = VISolverConfig()) -> list:
    """Solve the base problem and every perturbed one, return the errors.

    Each record also carries the recovery distance ``||P_{E_n} u - u||`` and,
    when ``phi`` has a known Lipschitz constant, the a-priori bound
    ``(||A w_n - g_n||_* + L_phi) / m`` on ``||u_n - w_n||`` for the recovery
    point ``w_n = P_{E_n} u``.
    """
    base_sol = solve_vi(base, cfg)
    if not base_sol.converged:
        raise ConvergenceError("base problem did not converge", base_sol.fp_residual, base_sol.iterations)
    u = base_sol.u
    space = base.space
    m = base.A.m_strong
    out = []
    for n in n_list:
        if n <= 0:
            raise ProblemDataError("family indices must be positive")
        E_n, g_n = family(n)
        inst = VIInstance(base.A, base.phi, E_n, g_n)
        sol = solve_vi(inst, cfg, u0=u)
        if not sol.converged:
            raise ConvergenceError(f"perturbed problem n={n} did not converge",
                                   sol.fp_residual, sol.iterations)
        w_n = E_n.project(u, cfg.eps_inner)
        rec = PerturbationRecord(int(n), space.norm(sol.u - u), sol.iterations, sol.fp_residual,
                                 space.norm(w_n - u))
        if base.phi.lipschitz is not None:
            rec.a_priori_bound = (space.dual_norm(base.A(w_n) - g_n) + base.phi.lipschitz) / m
        log.debug("n=%d error=%.3e recovery=%.3e bound=%.3e", n, rec.error,
                  rec.recovery_distance, rec.a_priori_bound)
        out.append(rec)
    return out

"""Convex potentials, constraint sets and their prox/projection oracles.

All proximal maps and projections are taken in the metric of the ambient
:class:`~qvhi.hilbert.GramSpace`, i.e. ``argmin_z 1/2 ||z - x||_G^2 + ...``.
When the Gram matrix is diagonal the separable cases are closed form; in
the general case they go through a semismooth Newton (primal-dual active
set) iteration that terminates finitely on M-matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import scipy.linalg as sla
from scipy.optimize import brentq

from .errors import ConvergenceError, ProblemDataError
from .hilbert import GramSpace

__all__ = [
    "ConvexFunction",
    "SeparableConvex",
    "zero_function",
    "weighted_l1",
    "weighted_quadratic",
    "ConstraintSet",
    "WholeSpace",
    "Box",
    "NormBall",
    "HalfSpace",
    "SeminormBall",
    "GroupL1Ball",
    "Intersection",
    "RadialConstraintFamily",
    "box_set",
    "constraint_set_at",
    "composite_prox",
    "separable_metric_prox",
    "project_weighted_group_l1_ball",
    "DYKSTRA_MAX_ITER",
]

DYKSTRA_MAX_ITER = 500


# ---------------------------------------------------------------------------
# separable prox in a general metric


def _soft(y, t):
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def _scalar_prox(y, c, tau, l1, quad, lower, upper):
    return np.clip(_soft(y, c * tau * l1) / (1.0 + c * tau * quad), lower, upper)


def _submatrix(G, rows, cols):
    if sp.issparse(G):
        return G[rows][:, cols]
    return G[np.ix_(rows, cols)]


def _spd_solve(M, rhs):
    if sp.issparse(M):
        return spla.spsolve(sp.csc_matrix(M), rhs)
    return np.linalg.solve(M, rhs)


def _vec(a, n):
    a = np.asarray(a, dtype=float)
    return a if a.shape == (n,) else np.broadcast_to(a, (n,))


def separable_metric_prox(space: GramSpace, x, tau, l1=0.0, quad=0.0,
                          lower=-np.inf, upper=np.inf, tol=1e-12, max_iter=200):
    """Prox of ``sum_i l1_i |z_i| + quad_i z_i^2 / 2`` plus a box, in the G-metric.

    Minimizes ``1/2 ||z - x||_G^2 + tau * sum_i (l1_i |z_i| + quad_i z_i^2 / 2)``
    subject to ``lower <= z <= upper``.
    """
    n = space.dim
    x = np.asarray(x, dtype=float)
    l1, quad, lower, upper = (_vec(a, n) for a in (l1, quad, lower, upper))
    if np.any(lower > upper):
        raise ProblemDataError("empty box: lower > upper somewhere")
    G = space.gram
    c = 1.0 / space.diag
    if space.is_diagonal:
        # exact: the problem decouples node by node
        return _scalar_prox(x, c, tau, l1, quad, lower, upper)

    gx = G @ x
    if not np.any(l1) and np.all(np.isinf(lower)) and np.all(np.isinf(upper)):
        # smooth and unconstrained: one linear solve
        if not np.any(quad):
            return x.copy()
        if sp.issparse(G):
            return spla.spsolve(sp.csc_matrix(G + sp.diags(tau * quad)), gx)
        return np.linalg.solve(G + np.diag(tau * quad), gx)
    z = _scalar_prox(x, c, tau, l1, quad, lower, upper)
    best = np.inf
    stall = 0
    for it in range(max_iter):
        y = z - c * (G @ z - gx)
        s = _soft(y, c * tau * l1) / (1.0 + c * tau * quad)
        F = z - np.clip(s, lower, upper)
        res = np.max(np.abs(F)) if n else 0.0
        if res <= tol * (1.0 + np.max(np.abs(z), initial=0.0)):
            return z
        if res < 0.5 * best:
            best, stall = res, 0
        else:
            stall += 1
            if stall > 25:
                break
        free = (np.abs(y) > c * tau * l1) & (s > lower) & (s < upper)
        act = ~free
        delta = np.empty(n)
        delta[act] = -F[act]
        idx_f = np.flatnonzero(free)
        if idx_f.size:
            idx_a = np.flatnonzero(act)
            rhs = -(1.0 + c[idx_f] * tau * quad[idx_f]) * F[idx_f] / c[idx_f]
            if idx_a.size:
                rhs -= _submatrix(G, idx_f, idx_a) @ delta[idx_a]
            Gff = G if idx_f.size == n else _submatrix(G, idx_f, idx_f)
            if np.any(quad[idx_f]):
                Gff = Gff + (sp.diags(tau * quad[idx_f]) if sp.issparse(Gff)
                             else np.diag(tau * quad[idx_f]))
            delta[idx_f] = _spd_solve(Gff, rhs)
        z = z + delta
    return _separable_prox_fista(space, x, tau, l1, quad, lower, upper, tol, z)


def _separable_prox_fista(space, x, tau, l1, quad, lower, upper, tol, z0, max_iter=200_000):
    # fallback when the active-set iteration stalls; slow but globally convergent
    G = space.gram
    gx = G @ x
    L = float(np.max(np.abs(G).sum(axis=1)))  # Gershgorin bound on lambda_max
    step = 1.0 / L
    z = z_prev = z0.copy()
    t = 1.0
    for it in range(max_iter):
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = z + (t - 1) / t_next * (z - z_prev)
        z_prev = z
        z = _scalar_prox(yk - step * (G @ yk - gx), step, tau, l1, quad, lower, upper)
        t = t_next
        # fixed-point residual of the unaccelerated map at z
        fp = z - _scalar_prox(z - step * (G @ z - gx), step, tau, l1, quad, lower, upper)
        if np.max(np.abs(fp)) <= tol * (1.0 + np.max(np.abs(z), initial=0.0)):
            return z
    raise ConvergenceError("separable metric prox did not converge",
                           float(np.max(np.abs(fp))), max_iter)


# ---------------------------------------------------------------------------
# convex functions


class ConvexFunction:
    """Convex lower semicontinuous potential with a metric prox oracle.

    Parameters
    ----------
    space : GramSpace
    value : callable
        ``value(z) -> float``.
    prox : callable
        ``prox(x, tau, eps) -> z`` approximating
        ``argmin_z 1/2 ||z - x||_V^2 + tau * value(z)`` to tolerance ``eps``.
    minorant : (l, b), optional
        Affine minorant ``value(z) >= l @ z + b`` with ``l`` a dual vector.
    lipschitz : float, optional
        Lipschitz constant in the V-norm, when known.
    """

    def __init__(self, space: GramSpace, value: Callable, prox: Callable,
                 minorant: Optional[tuple] = None, lipschitz: Optional[float] = None):
        self.space = space
        self._value = value
        self._prox = prox
        self.minorant = minorant
        self.lipschitz = lipschitz

    def __call__(self, z) -> float:
        return float(self._value(np.asarray(z, dtype=float)))

    value = __call__

    def prox(self, x, tau: float, eps: float = 1e-9) -> np.ndarray:
        if tau <= 0:
            raise ProblemDataError("prox step tau must be positive")
        return np.asarray(self._prox(self.space.check(x), tau, eps), dtype=float)

    @property
    def is_zero(self) -> bool:
        return False


class SeparableConvex(ConvexFunction):
    """``phi(z) = sum_i l1_i |z_i| + quad_i z_i^2 / 2`` with nonnegative weights."""

    def __init__(self, space: GramSpace, l1=0.0, quad=0.0):
        l1 = np.broadcast_to(np.asarray(l1, dtype=float), (space.dim,)).copy()
        quad = np.broadcast_to(np.asarray(quad, dtype=float), (space.dim,)).copy()
        if np.any(l1 < 0) or np.any(quad < 0) or not (np.all(np.isfinite(l1)) and np.all(np.isfinite(quad))):
            raise ProblemDataError("separable weights must be finite and nonnegative")
        self.l1 = l1
        self.quad = quad
        zero = np.zeros(space.dim)
        lip = None
        if not np.any(l1) and not np.any(quad):
            lip = 0.0
        elif not np.any(quad) and space.is_diagonal:
            # sup over sign patterns s of ||s * l1||_{V*}, which is sign-independent here
            lip = float(np.sqrt(np.sum(l1 * l1 / space.diag)))
        elif not np.any(quad) and space.dim <= 50:
            G = space.gram.toarray() if sp.issparse(space.gram) else space.gram
            lip = float(np.linalg.norm(l1) / np.sqrt(np.linalg.eigvalsh(G)[0]))
        super().__init__(
            space,
            value=lambda z: float(l1 @ np.abs(z) + 0.5 * quad @ (z * z)),
            prox=lambda x, tau, eps: separable_metric_prox(space, x, tau, l1, quad, tol=min(eps, 1e-10) * 1e-2),
            minorant=(zero, 0.0),
            lipschitz=lip,
        )

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.l1) or np.any(self.quad))

    def value_many(self, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        return np.abs(Z) @ self.l1 + 0.5 * (Z * Z) @ self.quad


def zero_function(space: GramSpace) -> SeparableConvex:
    return SeparableConvex(space)


def weighted_l1(space: GramSpace, weights=1.0) -> SeparableConvex:
    return SeparableConvex(space, l1=weights)


def weighted_quadratic(space: GramSpace, weights=1.0) -> SeparableConvex:
    return SeparableConvex(space, quad=weights)


# ---------------------------------------------------------------------------
# constraint sets


class ConstraintSet:
    """Closed convex set with a V-metric projection oracle."""

    space: GramSpace

    def contains(self, x, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def project(self, x, eps: float = 1e-9) -> np.ndarray:
        raise NotImplementedError

    def contains_many(self, Z, tol: float = 1e-9) -> np.ndarray:
        return np.array([self.contains(z, tol) for z in np.atleast_2d(Z)], dtype=bool)

    def distance(self, x, eps: float = 1e-9) -> float:
        x = self.space.check(x)
        return self.space.norm(x - self.project(x, eps))


class WholeSpace(ConstraintSet):
    def __init__(self, space: GramSpace):
        self.space = space

    def contains(self, x, tol=1e-9):
        return True

    def contains_many(self, Z, tol=1e-9):
        return np.ones(np.atleast_2d(Z).shape[0], dtype=bool)

    def project(self, x, eps=1e-9):
        return self.space.check(x).copy()


class Box(ConstraintSet):
    """``lower <= z <= upper`` componentwise (entries may be infinite)."""

    def __init__(self, space: GramSpace, lower=-np.inf, upper=np.inf):
        self.space = space
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (space.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (space.dim,)).copy()
        if np.any(self.lower > self.upper):
            raise ProblemDataError("empty box: lower > upper somewhere")

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_many(self, Z, tol=1e-9):
        Z = np.atleast_2d(Z)
        return np.all((Z >= self.lower - tol) & (Z <= self.upper + tol), axis=1)

    def project(self, x, eps=1e-9):
        x = self.space.check(x)
        if self.space.is_diagonal:
            return np.clip(x, self.lower, self.upper)
        return separable_metric_prox(self.space, x, 1.0, lower=self.lower, upper=self.upper,
                                     tol=min(eps, 1e-10) * 1e-2)


def box_set(space: GramSpace, lower=-np.inf, upper=np.inf) -> Box:
    return Box(space, lower, upper)


class NormBall(ConstraintSet):
    """``{z : ||z - center||_V <= radius}``; projection is radial scaling."""

    def __init__(self, space: GramSpace, radius: float, center=None):
        if radius < 0:
            raise ProblemDataError("ball radius must be nonnegative")
        self.space = space
        self.radius = float(radius)
        self.center = np.zeros(space.dim) if center is None else space.check(center)

    def contains(self, x, tol=1e-9):
        return self.space.norm(np.asarray(x) - self.center) <= self.radius + tol

    def contains_many(self, Z, tol=1e-9):
        D = np.atleast_2d(Z) - self.center
        G = self.space.gram
        nrm = np.sqrt(np.maximum(np.einsum("ij,ij->i", D, np.asarray((G @ D.T).T)), 0.0))
        return nrm <= self.radius + tol

    def project(self, x, eps=1e-9):
        d = self.space.check(x) - self.center
        nd = self.space.norm(d)
        if nd <= self.radius:
            return self.center + d
        return self.center + d * (self.radius / nd)


class HalfSpace(ConstraintSet):
    """``{z : a @ z <= b}`` with ``a`` a nonzero dual vector."""

    def __init__(self, space: GramSpace, a, b: float):
        self.space = space
        self.a = np.asarray(a, dtype=float)
        if not np.any(self.a):
            raise ProblemDataError("half-space normal must be nonzero")
        self.b = float(b)
        self._ra = space.riesz(self.a)
        self._aa = float(self.a @ self._ra)

    def contains(self, x, tol=1e-9):
        return float(self.a @ x) <= self.b + tol

    def contains_many(self, Z, tol=1e-9):
        return np.atleast_2d(Z) @ self.a <= self.b + tol

    def project(self, x, eps=1e-9):
        x = self.space.check(x)
        viol = float(self.a @ x) - self.b
        if viol <= 0:
            return x.copy()
        return x - (viol / self._aa) * self._ra


class SeminormBall(ConstraintSet):
    """``{z : ||D z||_2 <= radius}``.

    The metric projection solves ``(G + lam D^T D) z = G x`` for the
    multiplier ``lam >= 0``; ``lam`` is found by safeguarded Newton on
    ``1/||D z(lam)|| - 1/radius``.
    """

    def __init__(self, space: GramSpace, D, radius: float, max_iter: int = 100):
        self.space = space
        self.D = sp.csr_matrix(D) if sp.issparse(D) else np.atleast_2d(np.asarray(D, dtype=float))
        if self.D.shape[1] != space.dim:
            raise ProblemDataError("seminorm matrix has wrong number of columns")
        self.radius = float(radius)
        self.max_iter = max_iter
        self._DtD = self.D.T @ self.D

    def r(self, x) -> float:
        return float(np.linalg.norm(self.D @ np.asarray(x, dtype=float)))

    def contains(self, x, tol=1e-9):
        return self.r(x) <= self.radius + tol

    def contains_many(self, Z, tol=1e-9):
        DZ = np.asarray(self.D @ np.atleast_2d(Z).T)
        return np.linalg.norm(DZ, axis=0) <= self.radius + tol

    def _z_and_slope(self, lam, gx):
        G = self.space.gram
        Mlam = G + lam * self._DtD
        if sp.issparse(Mlam):
            lu = spla.splu(sp.csc_matrix(Mlam))
            z = lu.solve(gx)
            dz = -lu.solve(self._DtD @ z)
        else:
            fac = sla.cho_factor(Mlam)
            z = sla.cho_solve(fac, gx)
            dz = -sla.cho_solve(fac, self._DtD @ z)
        Dz = self.D @ z
        nDz = float(np.linalg.norm(Dz))
        dn = float(Dz @ (self.D @ dz)) / nDz if nDz > 0 else 0.0
        return z, nDz, dn

    def project(self, x, eps=1e-9):
        x = self.space.check(x)
        R = self.radius
        if self.r(x) <= R:
            return x.copy()
        if R <= 0.0:
            raise ProblemDataError("seminorm ball needs a positive radius")
        gx = self.space.gram @ x
        lo, hi = 0.0, None
        lam = 1.0
        z = x
        for it in range(self.max_iter):
            z, nDz, dn = self._z_and_slope(lam, gx)
            if abs(nDz - R) <= eps * max(R, 1.0):
                break
            if nDz > R:
                lo = lam
            else:
                hi = lam
            # Newton on psi(lam) = 1/||Dz|| - 1/R
            if nDz > 0 and dn < 0 and R > 0:
                psi = 1.0 / nDz - 1.0 / R
                dpsi = -dn / nDz ** 2
                cand = lam - psi / dpsi
            else:
                cand = np.nan
            if hi is None:
                lam = cand if np.isfinite(cand) and cand > lo else 4.0 * max(lam, 1.0)
            elif np.isfinite(cand) and lo < cand < hi:
                lam = cand
            else:
                lam = 0.5 * (lo + hi)
        else:
            raise ConvergenceError("seminorm-ball projection did not converge",
                                   abs(nDz - R), self.max_iter)
        rz = self.r(z)
        if rz > R:
            z = z * (R / rz)
        return z


def project_weighted_group_l1_ball(y, weights, radius: float, group_size: int = 1):
    """Euclidean projection onto ``{y : sum_g w_g ||y_g||_2 <= radius}``.

    Groups are consecutive blocks of ``group_size`` entries.  Solved exactly
    by sorting the breakpoints of the piecewise-linear multiplier equation.
    """
    y = np.asarray(y, dtype=float)
    Y = y.reshape(-1, group_size)
    w = np.asarray(weights, dtype=float)
    norms = np.linalg.norm(Y, axis=1)
    if w @ norms <= radius:
        return y.copy()
    pos = w > 0
    t = np.full_like(norms, np.inf)
    t[pos] = norms[pos] / w[pos]
    order = np.argsort(-t[pos])
    wp, npos, tp = w[pos][order], norms[pos][order], t[pos][order]
    s1 = np.cumsum(wp * npos)
    s2 = np.cumsum(wp * wp)
    theta_k = (s1 - radius) / s2
    k = np.flatnonzero(tp > theta_k)[-1]
    theta = max(theta_k[k], 0.0)
    new = norms.copy()
    new[pos] = np.maximum(norms[pos] - theta * w[pos], 0.0)
    scale = np.divide(new, norms, out=np.zeros_like(norms), where=norms > 0)
    return (Y * scale[:, None]).ravel()


class GroupL1Ball(ConstraintSet):
    """``{z : sum_g w_g ||(D z)_g||_2 <= radius}``, projected by ADMM.

    The ADMM splitting ``y = D z`` alternates a linear solve with
    ``G + sigma D^T D`` (factored once) and an exact group-l1 ball projection.
    The output is finally scaled radially onto the set, which is exact for
    feasibility because ``r`` is positively homogeneous.
    """

    def __init__(self, space: GramSpace, D, weights, radius: float, group_size: int = 1,
                 max_iter: int = 20_000):
        self.space = space
        self.D = sp.csr_matrix(D) if sp.issparse(D) else np.atleast_2d(np.asarray(D, dtype=float))
        if self.D.shape[1] != space.dim or self.D.shape[0] % group_size:
            raise ProblemDataError("group-l1 matrix shape incompatible with space/group size")
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (self.D.shape[0] // group_size,) or np.any(self.weights < 0):
            raise ProblemDataError("group weights must be nonnegative, one per group")
        self.radius = float(radius)
        self.group_size = group_size
        self.max_iter = max_iter

    def r(self, x) -> float:
        Y = np.asarray(self.D @ np.asarray(x, dtype=float)).reshape(-1, self.group_size)
        return float(self.weights @ np.linalg.norm(Y, axis=1))

    def r_many(self, Z) -> np.ndarray:
        DZ = np.asarray(self.D @ np.atleast_2d(Z).T).T
        nZ = DZ.shape[0]
        norms = np.linalg.norm(DZ.reshape(nZ, -1, self.group_size), axis=2)
        return norms @ self.weights

    def contains(self, x, tol=1e-9):
        return self.r(x) <= self.radius + tol

    def contains_many(self, Z, tol=1e-9):
        return self.r_many(Z) <= self.radius + tol

    def project(self, x, eps=1e-9):
        x = self.space.check(x)
        R = self.radius
        if self.r(x) <= R:
            return x.copy()
        G = self.space.gram
        D = self.D
        DtD = D.T @ D
        trG = float(np.sum(self.space.diag))
        trD = float(DtD.diagonal().sum())
        sigma = trG / trD if trD > 0 else 1.0

        def factor(sig):
            Msys = G + sig * DtD
            if sp.issparse(Msys):
                return spla.factorized(sp.csc_matrix(Msys))
            fac = sla.cho_factor(Msys)
            return lambda rhs: sla.cho_solve(fac, rhs)

        solve = factor(sigma)
        gx = G @ x
        y = D @ x
        u = np.zeros_like(y)
        z = x
        n_rescale = 0
        for it in range(self.max_iter):
            z = solve(gx + sigma * (D.T @ (y - u)))
            Dz = D @ z
            y_old = y
            y = project_weighted_group_l1_ball(Dz + u, self.weights, R, self.group_size)
            u = u + Dz - y
            prim = np.linalg.norm(Dz - y)
            dual = sigma * np.linalg.norm(D.T @ (y - y_old))
            if prim <= eps and dual <= eps:
                break
            # residual balancing of the penalty (u is the scaled dual, so it rescales too)
            if it % 25 == 24 and n_rescale < 40 and max(prim, dual) > 10 * min(prim, dual):
                c = 2.0 if prim > dual else 0.5
                sigma *= c
                u = u / c
                solve = factor(sigma)
                n_rescale += 1
        else:
            raise ConvergenceError("group-l1 ball projection (ADMM) did not converge",
                                   max(prim, dual), self.max_iter)
        rz = self.r(z)
        if rz > R:
            z = z * (R / rz)
        return z


class Intersection(ConstraintSet):
    """Intersection of convex sets, projected by cyclic Dykstra."""

    def __init__(self, sets: Sequence[ConstraintSet], max_iter: int = DYKSTRA_MAX_ITER):
        sets = [s for s in sets if not isinstance(s, WholeSpace)]
        if not sets:
            raise ProblemDataError("intersection of no sets: use WholeSpace")
        self.space = sets[0].space
        self.sets = sets
        self.max_iter = max_iter

    def contains(self, x, tol=1e-9):
        return all(s.contains(x, tol) for s in self.sets)

    def contains_many(self, Z, tol=1e-9):
        ok = np.ones(np.atleast_2d(Z).shape[0], dtype=bool)
        for s in self.sets:
            ok &= s.contains_many(Z, tol)
        return ok

    def project(self, x, eps=1e-9):
        x = self.space.check(x)
        if len(self.sets) == 1:
            return self.sets[0].project(x, eps)
        pair = _box_and_single(self.sets)
        if pair is not None:
            box, other = pair
            return _multiplier_prox(self.space, lambda y, s: box.project(y, eps * 0.1), other, x, eps)
        incs = [np.zeros_like(x) for _ in self.sets]
        z = x.copy()
        for it in range(self.max_iter):
            z_start = z
            for k, s in enumerate(self.sets):
                y = s.project(z + incs[k], eps * 0.1)
                incs[k] = z + incs[k] - y
                z = y
            if self.space.norm(z - z_start) <= eps and self.contains(z, eps):
                return z
        raise ConvergenceError("Dykstra projection onto intersection did not converge",
                               self.space.norm(z - z_start), self.max_iter)



def _multiplier_prox(space, prox_box, S, x, eps):
    """Exact prox over ``box ∩ S`` for a ball or half-space ``S`` via its scalar multiplier.

    ``prox_box(y, s)`` must return the box-constrained prox of ``y`` with the
    potential scaled by ``s``.  For the ball, the multiplier ``lam`` merges the
    penalty into the metric term, giving a box prox at ``(x + lam c)/(1 + lam)``
    with scale ``1/(1 + lam)``; for the half-space it shifts ``x`` along the
    Riesz vector of the normal.  The constraint value is monotone in ``lam``
    and a scalar root finder locates the active multiplier.
    """
    if isinstance(S, NormBall):
        def z_of(lam):
            return prox_box((x + lam * S.center) / (1.0 + lam), 1.0 / (1.0 + lam))

        def value(z):
            return space.norm(z - S.center) - S.radius
    else:
        def z_of(lam):
            return prox_box(x - lam * S._ra, 1.0)

        def value(z):
            return float(S.a @ z) - S.b
    memo = {}

    def g(lam):
        if lam not in memo:
            z = z_of(lam)
            memo[lam] = (value(z), z)
        return memo[lam][0]

    if g(0.0) <= 0.0:
        return memo[0.0][1]
    lo, hi = 0.0, 1.0
    hint = getattr(S, "_lam_hint", None)
    if hint is not None and hint > 0.0:
        # successive prox calls on the same set have nearby multipliers
        a, b = hint * (1 - 1e-6), hint * (1 + 1e-6)
        if g(a) > 0.0:
            lo, hi = a, b
    while g(hi) > 0.0:
        lo, hi = hi, 4.0 * hi
        if hi > 1e60:
            raise ProblemDataError("box and constraint do not intersect")
    lam = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    S._lam_hint = lam
    if g(lam) > 0.0:
        # nudge toward the feasible end of the bracket so the result lies in S
        lam = min(hi, lam * (1 + 1e-12) + 1e-15)
        g(lam)
    return memo[lam][1]



def _smooth_ball_prox(space, quad, tau, S, x, cache):
    """Exact prox of ``tau/2 z^T diag(quad) z`` over a V-ball, dense metric.

    With ``W^T G W = I`` and ``W^T Q W = diag(mu)`` the optimality system
    ``((1 + lam) G + tau Q) z = G x + lam G c`` is diagonal, and the ball
    constraint becomes the secular equation
    ``sum_i a_i^2 / (1 + lam + tau mu_i)^2 = r^2`` with ``a = W^T G x - (I + tau mu) W^T G c``.
    """
    key = (float(tau), id(space))
    if cache.get("key") != key:
        mu, W = sla.eigh(np.diag(quad), np.asarray(space.gram))
        cache.update(key=key, mu=mu, W=W)
    mu, W = cache["mu"], cache["W"]
    G = space.gram
    y = W.T @ (G @ x)
    gam = W.T @ (G @ S.center)
    d0 = 1.0 + tau * mu
    a = y - d0 * gam
    r = S.radius

    def g(lam):
        return float(np.sqrt(np.sum((a / (d0 + lam)) ** 2))) - r

    if g(0.0) <= 0.0:
        lam = 0.0
    else:
        hi = 1.0
        while g(hi) > 0.0:
            hi *= 4.0
        lam = brentq(g, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        if g(lam) > 0.0:
            lam = lam * (1 + 1e-14) + 1e-300
    return S.center + W @ (a / (d0 + lam))


def _box_and_single(sets):
    boxes = [s for s in sets if isinstance(s, Box)]
    rest = [s for s in sets if not isinstance(s, Box)]
    if len(boxes) == 1 and len(rest) == 1 and isinstance(rest[0], (NormBall, HalfSpace)):
        return boxes[0], rest[0]
    return None


def _flatten(E: ConstraintSet):
    if isinstance(E, Intersection):
        out = []
        for s in E.sets:
            out.extend(_flatten(s))
        return out
    if isinstance(E, WholeSpace):
        return []
    return [E]


# ---------------------------------------------------------------------------
# radial constraint families  K(v) = {w : r(w) <= m(v)}

R_KINDS = ("ambient-norm", "seminorm-l2", "weighted-l1")


@dataclass(frozen=True)
class RadialConstraintFamily:
    """Solution-dependent sublevel sets ``K(v) = {w : r(w) <= m(v)}``.

    ``r_kind`` selects ``r``: the ambient V-norm, ``||D w||_2``, or the
    weighted group-l1 norm ``sum_g weights_g ||(D w)_g||_2``.  ``rho`` is the
    claimed infimum of ``m``.
    """

    space: GramSpace
    m: Callable[[np.ndarray], float]
    rho: float
    r_kind: str = "ambient-norm"
    D: object = None
    weights: object = None
    group_size: int = 1

    def __post_init__(self):
        if self.r_kind not in R_KINDS:
            raise ProblemDataError(f"unknown r_kind {self.r_kind!r}; expected one of {R_KINDS}")
        if self.rho <= 0:
            raise ProblemDataError("rho (infimum of m) must be positive")
        if self.r_kind != "ambient-norm" and self.D is None:
            raise ProblemDataError(f"r_kind {self.r_kind!r} needs a matrix D")
        if self.r_kind == "weighted-l1" and self.weights is None:
            n_groups = self.D.shape[0] // self.group_size
            object.__setattr__(self, "weights", np.ones(n_groups))

    def r(self, w) -> float:
        w = np.asarray(w, dtype=float)
        if self.r_kind == "ambient-norm":
            return self.space.norm(w)
        Dw = np.asarray(self.D @ w)
        if self.r_kind == "seminorm-l2":
            return float(np.linalg.norm(Dw))
        return float(np.asarray(self.weights) @ np.linalg.norm(Dw.reshape(-1, self.group_size), axis=1))

    def r_many(self, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        if self.r_kind == "ambient-norm":
            GZ = np.asarray((self.space.gram @ Z.T).T)
            return np.sqrt(np.maximum(np.einsum("ij,ij->i", Z, GZ), 0.0))
        DZ = np.asarray(self.D @ Z.T).T
        if self.r_kind == "seminorm-l2":
            return np.linalg.norm(DZ, axis=1)
        norms = np.linalg.norm(DZ.reshape(Z.shape[0], -1, self.group_size), axis=2)
        return norms @ np.asarray(self.weights)

    def at(self, v) -> ConstraintSet:
        return constraint_set_at(self, v)


def constraint_set_at(K: RadialConstraintFamily, v) -> ConstraintSet:
    """The convex set ``{w : r(w) <= m(v)}``."""
    radius = float(K.m(np.asarray(v, dtype=float)))
    if not np.isfinite(radius) or radius < 0.0:
        # r(0) = 0 for every supported kind, so radius < r(0) means bad data
        raise ProblemDataError(f"m(v) = {radius} is below r(0) = 0: empty constraint set")
    if K.r_kind == "ambient-norm":
        return NormBall(K.space, radius)
    if K.r_kind == "seminorm-l2":
        return SeminormBall(K.space, K.D, radius)
    return GroupL1Ball(K.space, K.D, K.weights, radius, K.group_size)


# ---------------------------------------------------------------------------
# composite prox of phi + indicator(E)


def _dykstra_prox(space, prox_a, prox_b, x, eps, max_iter):
    # Dykstra-like splitting: converges to prox_{a+b}(x) in the space metric
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    xk = x.copy()
    for it in range(max_iter):
        y = prox_a(xk + p)
        p = xk + p - y
        x_new = prox_b(y + q)
        q = y + q - x_new
        step = space.norm(x_new - xk)
        gap = space.norm(x_new - y)
        xk = x_new
        if step <= eps and gap <= eps:
            return xk
    raise ConvergenceError("Dykstra composite prox did not converge", max(step, gap), max_iter)


def composite_prox(phi: ConvexFunction, E: ConstraintSet, x, tau: float,
                   eps: float = 1e-9, max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """Approximate ``argmin_{z in E} 1/2 ||z - x||_V^2 + tau * phi(z)``.

    Separable potentials and boxes are merged into one exact metric prox;
    any remaining sets are handled by Dykstra-like alternation.
    """
    if tau <= 0:
        raise ProblemDataError("prox step tau must be positive")
    space = E.space
    x = space.check(x)
    sets = _flatten(E)
    if isinstance(phi, SeparableConvex):
        boxes = [s for s in sets if isinstance(s, Box)]
        rest = [s for s in sets if not isinstance(s, Box)]
        lower = np.full(space.dim, -np.inf)
        upper = np.full(space.dim, np.inf)
        for b in boxes:
            lower = np.maximum(lower, b.lower)
            upper = np.minimum(upper, b.upper)
        trivial = phi.is_zero and not boxes
        inner_tol = min(eps, 1e-10) * 1e-2

        def first(y):
            if trivial:
                return y
            return separable_metric_prox(space, y, tau, phi.l1, phi.quad, lower, upper, tol=inner_tol)
    else:
        rest = sets
        trivial = False

        def first(y):
            return phi.prox(y, tau, eps * 0.1)

    if not rest:
        return first(x)
    second_set = rest[0] if len(rest) == 1 else Intersection(rest)
    if trivial:
        return second_set.project(x, eps)
    if (isinstance(phi, SeparableConvex) and len(rest) == 1 and isinstance(rest[0], NormBall)
            and not boxes and not np.any(phi.l1) and not space.is_diagonal
            and not sp.issparse(space.gram) and space.dim <= 200):
        return _smooth_ball_prox(space, phi.quad, tau, rest[0], x, phi.__dict__.setdefault("_eig_cache", {}))
    if isinstance(phi, SeparableConvex) and len(rest) == 1 and isinstance(rest[0], (NormBall, HalfSpace)):
        def scaled(y, s):
            return separable_metric_prox(space, y, tau * s, phi.l1, phi.quad, lower, upper, tol=inner_tol)
        return _multiplier_prox(space, scaled, rest[0], x, eps)
    return _dykstra_prox(space, first, lambda y: second_set.project(y, eps * 0.1), x, eps, max_iter)

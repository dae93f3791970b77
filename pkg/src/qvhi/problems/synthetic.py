"""Random finite-dimensional instances with known constants."""

from __future__ import annotations

import numpy as np

from ..clarke import SuperpositionFunctional, named_potential
from ..convex import RadialConstraintFamily, SeparableConvex, WholeSpace
from ..errors import ProblemDataError
from ..hilbert import GramSpace, LinearMap, linear_operator
from ..solver import QVHIProblem

__all__ = ["synthetic_instance", "random_spd", "REGIMES"]

REGIMES = ("unique", "multistable")


def random_spd(rng, dim: int, lo: float, hi: float) -> np.ndarray:
    """SPD matrix with eigenvalues drawn from ``[lo, hi]`` (both endpoints hit when dim > 1)."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rng.uniform(lo, hi, dim)
    if dim > 1:
        eig[0], eig[-1] = lo, hi
    S = (Q * eig) @ Q.T
    return 0.5 * (S + S.T)


def synthetic_instance(dim: int, seed: int = 0, regime: str = "unique") -> QVHIProblem:
    """Deterministic random problem.

    ``unique``: random SPD metric and operator, ``phi`` drawn from zero,
    weighted l1 or quadratic, ``j`` a small multiple of a convex smooth
    quadratic (so the outer map is a contraction), and the ball family
    ``m(v) = m0 + c ||v||_X`` with ``c`` small.

    ``multistable``: identity data with the nonconvex ``remark43`` potential
    at unit scale and ``f = 1.5`` per coordinate.  Each coordinate then has
    the solutions 0.75, 1 and 1.5.
    """
    if dim < 1:
        raise ProblemDataError("dim must be at least 1")
    if regime not in REGIMES:
        raise ProblemDataError(f"unknown regime {regime!r}; expected {REGIMES}")
    rng = np.random.default_rng(seed)
    if regime == "multistable":
        V = GramSpace.identity(dim)
        X = GramSpace.diagonal(np.ones(dim))
        A = linear_operator(V, np.eye(dim))
        j = SuperpositionFunctional(named_potential("remark43"), np.ones(dim), X)
        return QVHIProblem(A, SeparableConvex(V), j, LinearMap(np.eye(dim), V, X),
                           np.full(dim, 1.5), WholeSpace(V), name=f"multistable-{dim}-{seed}")

    V = GramSpace(random_spd(rng, dim, 0.5, 2.0), "V")
    A = linear_operator(V, random_spd(rng, dim, 1.0, 3.0))
    weights = rng.uniform(0.5, 1.5, dim)
    X = GramSpace.diagonal(weights)
    M = LinearMap(rng.uniform(0.5, 1.5) * np.eye(dim) + 0.2 * rng.standard_normal((dim, dim)), V, X)
    kind = int(rng.integers(3))
    if kind == 0:
        phi = SeparableConvex(V)
    elif kind == 1:
        phi = SeparableConvex(V, l1=rng.uniform(0.0, 0.5, dim))
    else:
        phi = SeparableConvex(V, quad=rng.uniform(0.0, 1.0, dim))
    Mn = M.operator_norm()
    c_j = 0.25 * A.m_strong / Mn ** 2
    j = SuperpositionFunctional(named_potential("smooth-quad").scaled(c_j), weights, X)
    m0 = rng.uniform(0.5, 2.0)
    c_K = 0.1 * rng.uniform()
    K = RadialConstraintFamily(V, lambda v, M=M, X=X: m0 + c_K * X.norm(M.matrix @ v), m0)
    f = V.to_dual(2.0 * rng.standard_normal(dim))
    return QVHIProblem(A, phi, j, M, f, K, name=f"unique-{dim}-{seed}")


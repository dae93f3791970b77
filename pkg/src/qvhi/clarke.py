"""Locally Lipschitz potentials and their Clarke calculus.

Scalar potentials are continuous and piecewise C^1.  For that class the
Clarke subdifferential at ``r`` is the interval spanned by the one-sided
derivatives, and the generalized directional derivative is its support
function ``h0(r; d) = max(lo * d, hi * d)``.

Nodal functionals ``j(w) = sum_i weight_i * h_i(w_i)`` live on an X-space
whose Gram matrix is ``diag(weights)``.  A subgradient is returned as the
nodal vector ``zeta`` with ``zeta_i`` in the interval at node ``i``; the
quadrature weights enter through the X-pairing ``<zeta, d>_X``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ProblemDataError
from .hilbert import GramSpace

__all__ = [
    "LocallyLipschitz1D",
    "SuperpositionFunctional",
    "SELECTION_RULES",
    "named_potential",
    "interval_subdifferential",
    "h0_directional",
    "j0_directional",
    "subgradient_select",
    "radial_retraction",
    "truncated_F",
    "relaxed_monotonicity_witness",
    "TruncationData",
]

SELECTION_RULES = ("min-norm", "direction-attaining", "midpoint")


@dataclass(frozen=True)
class LocallyLipschitz1D:
    """Continuous piecewise-C^1 function on the real line.

    Piece ``k`` lives on ``[breakpoints[k-1], breakpoints[k])`` (piece 0 and
    the last piece extend to infinity).  ``pieces`` holds
    ``(value, derivative)`` pairs of vectorized callables.  ``growth`` is a
    declared ``(c0, c1)`` with ``|dh(r)| <= c0 + c1 |r|``.
    """

    breakpoints: Sequence[float]
    pieces: Sequence[tuple]
    growth: tuple = (0.0, 0.0)
    name: str = "custom"
    curvature: float = 0.0  # bound on |h''| inside pieces, used for grid calibration
    breakpoint_atol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or np.any(np.diff(bp) <= 0):
            raise ProblemDataError("breakpoints must be strictly increasing")
        if len(self.pieces) != bp.size + 1:
            raise ProblemDataError(f"need {bp.size + 1} pieces for {bp.size} breakpoints")
        c0, c1 = self.growth
        if c0 < 0 or c1 < 0:
            raise ProblemDataError("growth constants must be nonnegative")
        object.__setattr__(self, "breakpoints", bp)
        for k, b in enumerate(bp):
            left = float(self.pieces[k][0](np.array([b]))[0])
            right = float(self.pieces[k + 1][0](np.array([b]))[0])
            if abs(left - right) > 1e-12 * max(1.0, abs(left)):
                raise ProblemDataError(f"discontinuity at breakpoint {b}: {left} vs {right}")

    def _piece_index(self, r):
        return np.searchsorted(self.breakpoints, r, side="right")

    def _eval(self, r, which):
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        idx = self._piece_index(flat)
        out = np.empty_like(flat)
        for k in np.unique(idx):
            mask = idx == k
            out[mask] = self.pieces[k][which](flat[mask])
        return out.reshape(r.shape) if r.ndim else float(out[0])

    def __call__(self, r):
        return self._eval(r, 0)

    def interval(self, r):
        """Clarke subdifferential ``(lo, hi)`` at ``r`` (vectorized)."""
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        d = np.atleast_1d(self._eval(flat, 1))
        lo = d.copy()
        hi = d.copy()
        bp = self.breakpoints
        if bp.size:
            k = np.clip(np.searchsorted(bp, flat), 0, bp.size - 1)
            near = np.abs(flat - bp[k]) <= self.breakpoint_atol * np.maximum(1.0, np.abs(bp[k]))
            # also check the breakpoint just below
            k2 = np.clip(k - 1, 0, bp.size - 1)
            near2 = np.abs(flat - bp[k2]) <= self.breakpoint_atol * np.maximum(1.0, np.abs(bp[k2]))
            kk = np.where(near, k, k2)
            hit = near | near2
            for i in np.flatnonzero(hit):
                b = bp[kk[i]]
                left = float(self.pieces[kk[i]][1](np.array([b]))[0])
                right = float(self.pieces[kk[i] + 1][1](np.array([b]))[0])
                lo[i], hi[i] = min(left, right), max(left, right)
        if r.ndim == 0:
            return float(lo[0]), float(hi[0])
        return lo.reshape(r.shape), hi.reshape(r.shape)

    def scaled(self, c: float, name: Optional[str] = None) -> "LocallyLipschitz1D":
        if c < 0:
            raise ProblemDataError("scale must be nonnegative")
        pieces = [(lambda r, f=f: c * f(r), lambda r, g=g: c * g(r)) for f, g in self.pieces]
        return LocallyLipschitz1D(self.breakpoints, pieces, (c * self.growth[0], c * self.growth[1]),
                                  name or f"{c:g}*{self.name}", c * self.curvature)

    def with_growth(self, c0: float, c1: float) -> "LocallyLipschitz1D":
        return LocallyLipschitz1D(self.breakpoints, self.pieces, (c0, c1), self.name, self.curvature)


def _const(c):
    return lambda r: np.full(np.shape(r), float(c))


def named_potential(key: str) -> LocallyLipschitz1D:
    """Built-in potentials: ``remark43``, ``abs``, ``smooth-quad``, ``zero``.

    ``remark43`` is 0 for r < 0, r^2/2 on [0, 1) and 1/2 for r >= 1: locally
    Lipschitz, nonconvex, with subgradients bounded by 1.
    """
    if key == "remark43":
        return LocallyLipschitz1D(
            [0.0, 1.0],
            [(_const(0.0), _const(0.0)),
             (lambda r: 0.5 * r * r, lambda r: np.asarray(r, dtype=float)),
             (_const(0.5), _const(0.0))],
            growth=(1.0, 0.0), name="remark43", curvature=1.0,
        )
    if key == "abs":
        return LocallyLipschitz1D(
            [0.0],
            [(lambda r: -np.asarray(r, dtype=float), _const(-1.0)),
             (lambda r: np.asarray(r, dtype=float), _const(1.0))],
            growth=(1.0, 0.0), name="abs",
        )
    if key == "smooth-quad":
        return LocallyLipschitz1D(
            [], [(lambda r: 0.5 * np.asarray(r, dtype=float) ** 2, lambda r: np.asarray(r, dtype=float))],
            growth=(0.0, 1.0), name="smooth-quad", curvature=1.0,
        )
    if key == "zero":
        return LocallyLipschitz1D([], [(_const(0.0), _const(0.0))], growth=(0.0, 0.0), name="zero")
    raise ProblemDataError(f"unknown potential {key!r}; known: remark43, abs, smooth-quad, zero")


def interval_subdifferential(h: LocallyLipschitz1D, r):
    return h.interval(r)


def h0_directional(h: LocallyLipschitz1D, r, d):
    """``h0(r; d) = max{zeta * d : zeta in dh(r)}``."""
    lo, hi = h.interval(r)
    return np.maximum(lo * np.asarray(d), hi * np.asarray(d))


class SuperpositionFunctional:
    """``j(w) = sum_i weights_i * h_i(w_i)`` on a lumped X-space.

    ``h`` is one potential shared by all nodes or a sequence with one
    potential per node.  The X-space Gram matrix must be ``diag(weights)``.
    """

    def __init__(self, h, weights, space: Optional[GramSpace] = None):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ProblemDataError("quadrature weights must be positive and finite")
        if space is None:
            space = GramSpace.diagonal(weights, "X")
        if space.dim != weights.size:
            raise ProblemDataError("weights length does not match X dimension")
        if not space.is_diagonal or not np.allclose(space.diag, weights, rtol=1e-12, atol=0):
            raise ProblemDataError("X Gram matrix must be the lumped diagonal of the weights")
        if isinstance(h, LocallyLipschitz1D):
            self._groups = [(h, np.arange(weights.size))]
            self.hs = None
        else:
            hs = list(h)
            if len(hs) != weights.size:
                raise ProblemDataError("need one potential per node")
            self.hs = hs
            ids = {}
            for i, hi in enumerate(hs):
                ids.setdefault(id(hi), (hi, []))[1].append(i)
            self._groups = [(hi, np.array(idx)) for hi, idx in ids.values()]
        self.h = h
        self.weights = weights
        self.space = space

    @property
    def is_zero(self) -> bool:
        return all(hh.name == "zero" for hh, _ in self._groups)

    def __call__(self, w) -> float:
        w = self.space.check(w)
        total = 0.0
        for hh, idx in self._groups:
            total += float(self.weights[idx] @ np.atleast_1d(hh(w[idx])))
        return total

    def intervals(self, w):
        w = np.asarray(w, dtype=float)
        lo = np.empty(w.shape)
        hi = np.empty(w.shape)
        for hh, idx in self._groups:
            l, h_ = hh.interval(w[..., idx])
            lo[..., idx] = l
            hi[..., idx] = h_
        return lo, hi

    def j0(self, w, d):
        """Nodal upper surrogate ``sum_i weights_i h0(w_i; d_i)`` (vectorized in leading axes)."""
        lo, hi = self.intervals(w)
        d = np.asarray(d, dtype=float)
        return np.maximum(lo * d, hi * d) @ self.weights

    def growth_constants(self, sharp: bool = True):
        """``(alpha, beta)`` with ``||zeta||_X <= alpha + beta ||w||_X`` for all selections.

        ``sharp`` uses the triangle inequality in L^2 directly; otherwise the
        looser ``(a + b)^2 <= 2a^2 + 2b^2`` route is used, giving the factor
        sqrt(2) on both constants.
        """
        c0 = max(hh.growth[0] for hh, _ in self._groups)
        c1 = max(hh.growth[1] for hh, _ in self._groups)
        alpha = c0 * np.sqrt(self.weights.sum())
        beta = c1
        if not sharp:
            alpha, beta = np.sqrt(2.0) * alpha, np.sqrt(2.0) * beta
        return float(alpha), float(beta)

    def curvature(self) -> float:
        return max(hh.curvature for hh, _ in self._groups)


def j0_directional(j: SuperpositionFunctional, w, d) -> float:
    w = j.space.check(w)
    d = j.space.check(d, "direction")
    return float(j.j0(w, d))


def subgradient_select(j: SuperpositionFunctional, w, rule: str = "min-norm", d_opt=None):
    """Pick ``zeta_i`` in the Clarke interval at every node.

    ``min-norm`` takes the interval point closest to 0, ``midpoint`` the
    center, and ``direction-attaining`` the endpoint maximizing
    ``zeta_i * d_i`` so that ``<zeta, d>_X`` equals the nodal ``j0(w; d)``.
    """
    if rule not in SELECTION_RULES:
        raise ProblemDataError(f"unknown selection rule {rule!r}")
    w = j.space.check(w)
    lo, hi = j.intervals(w)
    if rule == "min-norm":
        return np.clip(0.0, lo, hi)
    if rule == "midpoint":
        return 0.5 * (lo + hi)
    if d_opt is None:
        raise ProblemDataError("direction-attaining selection needs a direction d_opt")
    d = j.space.check(d_opt, "direction")
    return np.where(d >= 0, hi, lo)


def radial_retraction(space: GramSpace, z, R2: float):
    """Identity on the X-ball of radius ``R2``, radial scaling outside."""
    if R2 <= 0:
        raise ProblemDataError("retraction radius must be positive")
    z = space.check(z)
    nz = space.norm(z)
    if nz <= R2:
        return z.copy()
    return z * (R2 / nz)


@dataclass(frozen=True)
class TruncationData:
    R2: float
    R: float


def truncated_F(j: SuperpositionFunctional, z, R2: float, rule: str = "min-norm", d_opt=None):
    """A selection of the subdifferential of ``j`` at the retracted point."""
    return subgradient_select(j, radial_retraction(j.space, z, R2), rule, d_opt)


@dataclass
class MonotonicityWitness:
    r: float
    s: float
    value: float  # (zeta_r - zeta_s)(r - s) + m (r - s)^2, negative means violation


def relaxed_monotonicity_witness(h: LocallyLipschitz1D, m_relax: float, offsets=None,
                                 n_pairs: int = 200, span: float = 2.0, n_grid: int = 801):
    """Search for a violation of ``(zeta_r - zeta_s)(r - s) >= -m (r - s)^2``.

    Pairs straddling each breakpoint (geometric offsets on both sides plus the
    symmetric pairs ``b -/+ 1/n``) and pairs on a uniform grid around the
    breakpoints are tested with the extreme subgradient selections.  Returns
    the most violating :class:`MonotonicityWitness`, or ``None``.
    """
    if m_relax < 0:
        raise ProblemDataError("m_relax must be nonnegative")
    if offsets is None:
        offsets = np.geomspace(1e-6, 1.0, 61)
    offsets = np.asarray(offsets, dtype=float)
    bp = h.breakpoints
    R, S = [], []
    for b in bp:
        d1, d2 = np.meshgrid(offsets, offsets)
        R.append((b - d1).ravel())
        S.append((b + d2).ravel())
        n = np.arange(1, n_pairs + 1)
        R.append(b - 1.0 / n)
        S.append(b + 1.0 / n)
    center = 0.5 * (bp.min() + bp.max()) if bp.size else 0.0
    half = span + (0.5 * (bp.max() - bp.min()) if bp.size else 0.0)
    grid = np.linspace(center - half, center + half, n_grid)
    for k in (1, 2, 5, 20):
        R.append(grid[:-k])
        S.append(grid[k:])
    r = np.concatenate(R)
    s = np.concatenate(S)
    lo_r, hi_r = h.interval(r)
    lo_s, hi_s = h.interval(s)
    diff = r - s
    # r < s everywhere: the product is smallest for zeta_r at hi, zeta_s at lo
    val = (hi_r - lo_s) * diff + m_relax * diff * diff
    tol = 1e-13 * np.maximum(1.0, diff * diff)
    k = int(np.argmin(val))
    if val[k] < -tol[k]:
        return MonotonicityWitness(float(r[k]), float(s[k]), float(val[k]))
    return None

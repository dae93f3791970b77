"""Finite-dimensional Hilbert spaces with a Gram-matrix metric.

Primal vectors are plain 1-D arrays of coordinates.  Dual vectors (elements
of V*) are stored in functional coordinates, so the pairing between a dual
vector ``g`` and a primal vector ``v`` is ``g @ v``; every dual norm goes
through a Gram solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, ProblemDataError

__all__ = [
    "GramSpace",
    "LinearMap",
    "NonlinearOperator",
    "inner",
    "riesz",
    "adjoint_apply",
    "operator_norm",
    "estimate_constants",
    "linear_operator",
    "read_matrix",
    "write_matrix",
]


class GramSpace:
    """R^dim with inner product ``<u, v> = u^T G v``.

    Parameters
    ----------
    gram : array_like or sparse matrix
        Symmetric positive-definite Gram matrix.
    label : str
        Free-form tag, e.g. ``"V"`` or ``"X"``.
    """

    def __init__(self, gram, label: str = "V"):
        if sp.issparse(gram):
            gram = sp.csc_matrix(gram, dtype=float)
            if gram.shape[0] != gram.shape[1]:
                raise ProblemDataError(f"Gram matrix must be square, got {gram.shape}")
            asym = abs(gram - gram.T).max() if gram.nnz else 0.0
            scale = abs(gram).max() if gram.nnz else 1.0
        else:
            gram = np.atleast_2d(np.asarray(gram, dtype=float))
            if gram.shape[0] != gram.shape[1]:
                raise ProblemDataError(f"Gram matrix must be square, got {gram.shape}")
            if not np.all(np.isfinite(gram)):
                raise ProblemDataError("Gram matrix has non-finite entries")
            asym = np.abs(gram - gram.T).max()
            scale = np.abs(gram).max()
        if asym > 1e-12 * max(scale, 1.0):
            raise ProblemDataError(f"Gram matrix is not symmetric (max asymmetry {asym:.2e})")
        self.gram = gram
        self.dim = gram.shape[0]
        self.label = label
        diag = np.asarray(gram.diagonal(), dtype=float)
        if sp.issparse(gram):
            offdiag = gram - sp.diags(diag)
            self.is_diagonal = offdiag.count_nonzero() == 0
        else:
            self.is_diagonal = bool(np.count_nonzero(gram - np.diag(diag)) == 0)
        self.diag = diag
        self._factor = None
        # factorize eagerly: SPD is checked by the factorization itself
        self._factorize()

    @classmethod
    def identity(cls, dim: int, label: str = "V") -> "GramSpace":
        return cls(np.eye(dim), label)

    @classmethod
    def diagonal(cls, weights, label: str = "X") -> "GramSpace":
        weights = np.asarray(weights, dtype=float)
        if weights.size > 200:
            return cls(sp.diags(weights), label)
        return cls(np.diag(weights), label)

    def _factorize(self):
        if self.is_diagonal:
            if np.any(self.diag <= 0):
                raise ProblemDataError("Gram matrix is not positive definite")
            self._factor = ("diag", self.diag)
        elif sp.issparse(self.gram):
            # symmetric pivoting keeps U's diagonal equal to the LDL^T pivots,
            # which are all positive iff the matrix is SPD
            lu = spla.splu(
                self.gram,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(lu.U.diagonal() <= 0):
                raise ProblemDataError("Gram matrix is not positive definite")
            self._factor = ("lu", lu)
        else:
            try:
                self._factor = ("chol", sla.cho_factor(self.gram))
            except np.linalg.LinAlgError as exc:
                raise ProblemDataError("Gram matrix is not positive definite") from exc

    def check(self, u, name: str = "vector") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ProblemDataError(
                f"{name} has shape {u.shape}, expected ({self.dim},) in space {self.label}"
            )
        return u

    def to_dual(self, u) -> np.ndarray:
        """Return the functional ``v -> <u, v>`` in dual coordinates."""
        return self.gram @ np.asarray(u, dtype=float)

    def inner(self, u, v) -> float:
        u = self.check(u)
        v = self.check(v)
        return float(u @ (self.gram @ v))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def solve(self, rhs) -> np.ndarray:
        kind, fac = self._factor
        rhs = np.asarray(rhs, dtype=float)
        if kind == "diag":
            return rhs / fac if rhs.ndim == 1 else rhs / fac[:, None]
        if kind == "lu":
            return fac.solve(rhs)
        return sla.cho_solve(fac, rhs)

    def riesz(self, g) -> np.ndarray:
        """Riesz representative ``s`` of a dual vector: ``<s, v> = g @ v``."""
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ProblemDataError(f"dual vector has shape {g.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(g)):
            raise ProblemDataError("dual vector has non-finite entries")
        return self.solve(g)

    def dual_norm(self, g) -> float:
        g = np.asarray(g, dtype=float)
        return float(np.sqrt(max(g @ self.riesz(g), 0.0)))

    def __repr__(self):
        return f"GramSpace(dim={self.dim}, label={self.label!r}, diagonal={self.is_diagonal})"


def inner(space: GramSpace, u, v) -> float:
    return space.inner(u, v)


def riesz(space: GramSpace, g) -> np.ndarray:
    return space.riesz(g)


@dataclass(frozen=True)
class LinearMap:
    """Linear map between two Gram spaces, ``codomain.dim x domain.dim``."""

    matrix: object
    domain: GramSpace
    codomain: GramSpace

    def __post_init__(self):
        mat = self.matrix
        if not sp.issparse(mat):
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            object.__setattr__(self, "matrix", mat)
            finite = np.all(np.isfinite(mat))
        else:
            mat = sp.csr_matrix(mat, dtype=float)
            object.__setattr__(self, "matrix", mat)
            finite = np.all(np.isfinite(mat.data))
        if mat.shape != (self.codomain.dim, self.domain.dim):
            raise ProblemDataError(
                f"map matrix has shape {mat.shape}, expected "
                f"({self.codomain.dim}, {self.domain.dim})"
            )
        if not finite:
            raise ProblemDataError("map matrix has non-finite entries")

    def __call__(self, v) -> np.ndarray:
        return self.matrix @ self.domain.check(v)

    def adjoint_apply(self, w) -> np.ndarray:
        """Dual vector ``v -> <w, M v>_X`` (coordinates ``M^T G_X w``)."""
        w = self.codomain.check(w, "codomain vector")
        return self.matrix.T @ (self.codomain.gram @ w)

    def scaled(self, c: float) -> "LinearMap":
        return LinearMap(self.matrix * c, self.domain, self.codomain)

    def operator_norm(self, rtol: float = 1e-8, max_iter: int = 10_000, seed: int = 0) -> float:
        return operator_norm(self, rtol=rtol, max_iter=max_iter, seed=seed)


def adjoint_apply(M: LinearMap, w) -> np.ndarray:
    return M.adjoint_apply(w)


def operator_norm(M: LinearMap, rtol: float = 1e-8, max_iter: int = 10_000, seed: int = 0) -> float:
    """``sup ||Mv||_X / ||v||_V`` by power iteration on ``G_V^{-1} M^T G_X M``.

    The Rayleigh quotient is monitored; iteration stops once its relative
    change falls below ``rtol``.
    """
    V = M.domain
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(V.dim)
    nv = V.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    lam_old = 0.0
    for it in range(1, max_iter + 1):
        Mv = M.matrix @ v
        lam = M.codomain.inner(Mv, Mv)
        if lam == 0.0:
            return 0.0
        y = V.solve(M.adjoint_apply(Mv))
        ny = V.norm(y)
        if ny == 0.0:
            return 0.0
        v = y / ny
        if it > 1 and abs(lam - lam_old) <= rtol * lam:
            # one more quotient at the updated vector, which is never worse
            Mv = M.matrix @ v
            return float(np.sqrt(max(lam, M.codomain.inner(Mv, Mv))))
        lam_old = lam
    raise ConvergenceError("operator norm power iteration did not converge",
                           abs(lam - lam_old) / lam, max_iter)


@dataclass(frozen=True)
class NonlinearOperator:
    """Operator ``A: V -> V*`` given as an oracle returning dual coordinates.

    ``m_strong`` and ``lipschitz`` are the declared strong-monotonicity and
    Lipschitz constants (V-norm to V*-norm).  ``matrix`` is set for linear
    operators, where ``apply(u) == matrix @ u``.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    m_strong: float
    lipschitz: float
    space: GramSpace
    matrix: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.m_strong < 0 or self.lipschitz <= 0:
            raise ProblemDataError("need m_strong >= 0 and lipschitz > 0")
        if self.m_strong > self.lipschitz * (1 + 1e-12):
            raise ProblemDataError(
                f"m_strong={self.m_strong} exceeds lipschitz={self.lipschitz}"
            )

    def __call__(self, u) -> np.ndarray:
        return np.asarray(self.apply(self.space.check(u)), dtype=float)


def linear_operator(space: GramSpace, matrix, m_strong=None, lipschitz=None) -> NonlinearOperator:
    """Wrap a matrix as an operator, computing exact constants when omitted.

    The constants come from generalized eigenvalues against the Gram matrix:
    ``m`` is the smallest eigenvalue of the symmetric part, ``L`` the square
    root of the largest eigenvalue of ``A^T G^{-1} A``.
    """
    if m_strong is None or lipschitz is None:
        A = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        G = space.gram.toarray() if sp.issparse(space.gram) else space.gram
        sym = 0.5 * (A + A.T)
        m_calc = float(sla.eigh(sym, G, eigvals_only=True)[0])
        AtGA = A.T @ space.solve(A)
        AtGA = 0.5 * (AtGA + AtGA.T)
        L_calc = float(np.sqrt(max(sla.eigh(AtGA, G, eigvals_only=True)[-1], 0.0)))
        if m_strong is None:
            m_strong = max(m_calc, 0.0)
        if lipschitz is None:
            lipschitz = max(L_calc, m_strong)
    return NonlinearOperator(lambda u: matrix @ u, float(m_strong), float(lipschitz), space, matrix)


def _sample_ball(space: GramSpace, n: int, radius: float, rng) -> np.ndarray:
    pts = rng.standard_normal((n, space.dim))
    norms = np.sqrt(np.einsum("ij,ij->i", pts, (space.gram @ pts.T).T))
    scale = radius * rng.uniform(size=n) ** (1.0 / space.dim) / norms
    return pts * scale[:, None]


def estimate_constants(A: NonlinearOperator, n_samples: int, radius: float = 1.0, seed: int = 0):
    """Sampled strong-monotonicity and Lipschitz ratios of ``A``.

    Returns ``(m_est, L_est)``: the minimum of
    ``<Av1 - Av2, v1 - v2> / ||v1 - v2||^2`` and the maximum of
    ``||Av1 - Av2||_* / ||v1 - v2||`` over ``n_samples`` random pairs in the
    ball of the given radius.  This is a witness, not a certificate.
    """
    if n_samples < 2:
        raise ProblemDataError("n_samples must be at least 2")
    space = A.space
    rng = np.random.default_rng(seed)
    P = _sample_ball(space, n_samples, radius, rng)
    Q = _sample_ball(space, n_samples, radius, rng)
    m_est, L_est = np.inf, 0.0
    for p, q in zip(P, Q):
        d = p - q
        nd2 = space.inner(d, d)
        if nd2 <= 1e-300:
            continue
        dA = A(p) - A(q)
        m_est = min(m_est, float(dA @ d) / nd2)
        L_est = max(L_est, space.dual_norm(dA) / np.sqrt(nd2))
    # both ratios are taken over the same pairs, so m_est <= L_est by Cauchy-Schwarz;
    # the max() only absorbs rounding
    return float(m_est), float(max(L_est, m_est))


def write_matrix(path, matrix) -> None:
    """Write a matrix as ``rows cols nnz`` then ``i j value`` lines (0-indexed)."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")


def read_matrix(path) -> sp.csr_matrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ProblemDataError(f"{path}: bad header, expected 'rows cols nnz'")
        rows, cols, nnz = (int(x) for x in header)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ProblemDataError(f"{path}: header announces {nnz} entries, found {data.shape[0]}")
    i, j = data[:, 0].astype(int), data[:, 1].astype(int)
    if nnz and (i.min() < 0 or j.min() < 0 or i.max() >= rows or j.max() >= cols):
        raise ProblemDataError(f"{path}: index out of range")
    return sp.csr_matrix((data[:, 2], (i, j)), shape=(rows, cols))

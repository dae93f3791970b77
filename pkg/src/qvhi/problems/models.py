"""Semipermeability models discretized with P1 elements.

Interior model: a diffusion law in the domain, a convex boundary potential
``k`` on the part G2 and a nonconvex interior potential ``h`` acting
through the embedding into ``L^2(Omega)``.

Boundary model: a convex interior potential ``p``, a nonconvex potential
``h2`` acting through the trace on S2, and the unilateral constraint
``v <= k2`` on S3.

Both models take the constraint family ``K(v) = {w : r(w) <= m(v)}``
with ``m(v) = m0 + int rho2 |v| dx``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..clarke import LocallyLipschitz1D, SuperpositionFunctional, named_potential
from ..convex import Box, RadialConstraintFamily, SeparableConvex, WholeSpace
from ..errors import ProblemDataError
from ..solver import QVHIProblem, check_smallness
from .fem import (FEMSpace, MaterialLaw, assemble_embedding, assemble_operator, assemble_trace,
                  lumped_load)

__all__ = [
    "AssembledProblem",
    "build_interior_problem",
    "build_boundary_problem",
    "constraint_family",
    "check_hypotheses",
    "HypothesisReport",
    "Clause",
    "smallness_threshold",
    "write_nodal_csv",
]

CONVEX_PRESETS = ("abs", "quad", "zero")


@dataclass
class AssembledProblem:
    qvhi: QVHIProblem
    space: FEMSpace
    law: MaterialLaw
    h: LocallyLipschitz1D
    provenance: dict = field(default_factory=dict)
    k2: Optional[np.ndarray] = None


def _nodal(space: FEMSpace, data, name: str) -> np.ndarray:
    if callable(data):
        vals = np.asarray(data(space.mesh.nodes), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(data, dtype=float), (space.n_nodes,)).copy()
    if vals.shape != (space.n_nodes,) or not np.all(np.isfinite(vals)):
        raise ProblemDataError(f"{name} must give one finite value per node")
    return vals


def _separable(space: FEMSpace, weights: np.ndarray, choice: str) -> SeparableConvex:
    if choice not in CONVEX_PRESETS:
        raise ProblemDataError(f"unknown convex integrand {choice!r}; expected {CONVEX_PRESETS}")
    if choice == "abs":
        return SeparableConvex(space.V, l1=weights)
    if choice == "quad":
        return SeparableConvex(space.V, quad=weights)
    return SeparableConvex(space.V)


def constraint_family(space: FEMSpace, params: Optional[dict]):
    """``K`` from ``{"kind", "m0", "rho2", "rho1"}``; ``None`` gives the whole space.

    ``kind`` is ``ambient-norm`` (``r = ||.||_V``) or ``gradient-l1``
    (``r(w) = sum_T rho1 |grad w| |T|``, a weighted group-l1 norm of the
    gradient).  ``m(v) = m0 + sum_i mass_i rho2(x_i) |v_i|``.
    """
    if params is None:
        return WholeSpace(space.V)
    unknown = set(params) - {"kind", "m0", "rho2", "rho1"}
    if unknown:
        raise ProblemDataError(f"unknown constraint parameters {sorted(unknown)}")
    kind = params.get("kind", "ambient-norm")
    m0 = float(params.get("m0", 1.0))
    if m0 <= 0:
        raise ProblemDataError("m0 must be positive")
    rho2 = _nodal(space, params.get("rho2", 0.0), "rho2")
    if np.any(rho2 < 0):
        raise ProblemDataError("rho2 must be nonnegative")
    wq = (space.mass_lumped * rho2)[space.free_nodes]

    def m(v):
        return m0 + float(wq @ np.abs(v))

    if kind == "ambient-norm":
        return RadialConstraintFamily(space.V, m, m0)
    if kind == "gradient-l1":
        rho1 = params.get("rho1", 1.0)
        rho1 = np.asarray(rho1(space.centroids) if callable(rho1) else
                          np.broadcast_to(np.asarray(rho1, dtype=float), space.measures.shape), dtype=float)
        if np.any(rho1 <= 0):
            raise ProblemDataError("rho1 must be positive")
        return RadialConstraintFamily(space.V, m, m0, "weighted-l1", space.gradient_free(),
                                      rho1 * space.measures, space.mesh.dim)
    raise ProblemDataError(f"unknown constraint kind {kind!r}")


def _growth_pair(h: LocallyLipschitz1D, total_weight: float):
    # the L^2 route through (a + b)^2 <= 2 a^2 + 2 b^2: alpha = sqrt(2) c0 |Omega|^(1/2), beta = sqrt(2) c1
    c0, c1 = h.growth
    return float(np.sqrt(2.0) * c0 * np.sqrt(total_weight)), float(np.sqrt(2.0) * c1)


def build_interior_problem(space: FEMSpace, law: MaterialLaw, h: Optional[LocallyLipschitz1D] = None,
                           k_choice: str = "abs", g1: Union[float, Callable] = 0.0,
                           r_m_params: Optional[dict] = None) -> AssembledProblem:
    """Interior semipermeability model on a mesh with parts G1 (clamped) and G2.

    ``phi(v) = sum over G2 nodes of boundary weight * k(v_i)``,
    ``j(w) = sum_i mass_i h(w_i)``, ``M`` the embedding and ``f`` the lumped
    load of ``g1``.  The growth constants follow the ``sqrt(2)`` route, so the
    smallness test is ``sqrt(2) c1 ||i||^2 < alpha_a``.
    """
    h = named_potential("zero") if h is None else h
    bw = np.zeros(space.free_nodes.size)
    if space.boundary_nodes.size and space.boundary_label.startswith("G"):
        bw[space.free_position(space.boundary_nodes)] = space.gram_X_boundary
    phi = _separable(space, bw, k_choice)
    M = assemble_embedding(space)
    j = SuperpositionFunctional(h, space.mass_lumped, M.codomain)
    alpha, beta = _growth_pair(h, space.mass_lumped.sum())
    A = assemble_operator(space, law)
    f = lumped_load(space, g1)
    K = constraint_family(space, r_m_params)
    P = QVHIProblem(A, phi, j, M, f, K, alpha=alpha, beta=beta, name="interior")
    prov = {"model": "interior", "law": law.kind, "h": h.name, "k": k_choice,
            "constraint": (r_m_params or {}).get("kind", "none") if r_m_params else "none",
            "dim": space.mesh.dim, "n_cells": space.mesh.n_cells_per_side}
    return AssembledProblem(P, space, law, h, prov)


def build_boundary_problem(space: FEMSpace, law: MaterialLaw, h2: Optional[LocallyLipschitz1D] = None,
                           p_choice: str = "abs", g1: Union[float, Callable] = 0.0,
                           k2=None, r_m_params: Optional[dict] = None) -> AssembledProblem:
    """Boundary semipermeability model on a mesh with parts S1, S2 and S3.

    ``phi(v) = sum_i mass_i p(v_i)``, ``j`` acts on the trace on S2 and ``C``
    is the box ``{v <= k2 on S3}``.  ``k2=None`` drops the box.
    """
    mesh = space.mesh
    if not np.any(mesh.facet_labels == "S2"):
        raise ProblemDataError("boundary model needs a nonempty S2")
    h2 = named_potential("zero") if h2 is None else h2
    phi = _separable(space, space.mass_lumped[space.free_nodes], p_choice)
    M = assemble_trace(space, "S2")
    j = SuperpositionFunctional(h2, M.codomain.diag, M.codomain)
    alpha, beta = _growth_pair(h2, M.codomain.diag.sum())
    A = assemble_operator(space, law)
    f = lumped_load(space, g1)
    K = constraint_family(space, r_m_params)
    C = None
    k2_vals = None
    if k2 is not None:
        if not np.any(mesh.facet_labels == "S3"):
            raise ProblemDataError("the constraint v <= k2 needs a nonempty S3")
        s3, _ = space.boundary_mass("S3")
        if s3.size == 0:
            raise ProblemDataError("S3 has no free nodes")
        k2_vals = _nodal(space, k2, "k2")[s3]
        upper = np.full(space.free_nodes.size, np.inf)
        upper[space.free_position(s3)] = k2_vals
        C = Box(space.V, -np.inf, upper)
    P = QVHIProblem(A, phi, j, M, f, K, C=C, alpha=alpha, beta=beta, name="boundary")
    prov = {"model": "boundary", "law": law.kind, "h": h2.name, "p": p_choice,
            "constraint": (r_m_params or {}).get("kind", "none") if r_m_params else "none",
            "obstacle": k2 is not None, "dim": mesh.dim, "n_cells": mesh.n_cells_per_side}
    return AssembledProblem(P, space, law, h2, prov, k2_vals)


def smallness_threshold(problem: AssembledProblem) -> float:
    """The value of ``c1`` where ``sqrt(2) c1 ||M||^2 = alpha_a``."""
    return problem.law.alpha_a / (np.sqrt(2.0) * problem.qvhi.M_norm ** 2)


@dataclass
class Clause:
    name: str
    passed: bool
    witness: object = None
    detail: str = ""


@dataclass
class HypothesisReport:
    clauses: list

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def failed(self) -> list:
        return [c.name for c in self.clauses if not c.passed]

    def __getitem__(self, name: str) -> Clause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)


def check_hypotheses(problem: AssembledProblem, n_samples: int = 200, seed: int = 0) -> HypothesisReport:
    """Sampled audit of the structural hypotheses; violations carry a witness."""
    rng = np.random.default_rng(seed)
    sp_ = problem.space
    d = sp_.mesh.dim
    law = problem.law
    P = problem.qvhi
    out = []

    out.append(Clause("mesh: clamped part has positive measure", sp_.dirichlet_nodes.size > 0))

    x = rng.uniform(size=(n_samples, d))
    xi1 = rng.standard_normal((n_samples, d)) * rng.uniform(0, 10, (n_samples, 1))
    xi2 = rng.standard_normal((n_samples, d)) * rng.uniform(0, 10, (n_samples, 1))
    a0 = law(x, np.zeros((n_samples, d)))
    k = int(np.argmax(np.linalg.norm(a0, axis=1)))
    out.append(Clause("law: a(x, 0) = 0", bool(np.linalg.norm(a0[k]) <= 1e-12), x[k]))

    a1 = law(x, xi1)
    ratio = np.linalg.norm(a1, axis=1) / (1.0 + np.linalg.norm(xi1, axis=1))
    k = int(np.argmax(ratio))
    out.append(Clause("law: growth |a| <= m_a (1 + |xi|)", bool(ratio[k] <= law.m_a * (1 + 1e-12)),
                      (x[k], xi1[k]), f"max ratio {ratio[k]:.6g} vs m_a {law.m_a:.6g}"))

    a2 = law(x, xi2)
    dxi = xi1 - xi2
    mono = np.einsum("ij,ij->i", a1 - a2, dxi) / np.maximum(np.einsum("ij,ij->i", dxi, dxi), 1e-300)
    k = int(np.argmin(mono))
    ok = law.alpha_a > 0 and mono[k] >= law.alpha_a * (1 - 1e-10)
    out.append(Clause("law: strong monotonicity with alpha_a > 0", bool(ok), (x[k], xi1[k], xi2[k]),
                      f"min ratio {mono[k]:.6g}, alpha_a {law.alpha_a:.6g}"))

    h = problem.h
    c0, c1 = h.growth
    r = np.concatenate([rng.uniform(-20, 20, n_samples), h.breakpoints])
    lo, hi = h.interval(r)
    excess = np.maximum(np.abs(lo), np.abs(hi)) - (c0 + c1 * np.abs(r))
    k = int(np.argmax(excess))
    out.append(Clause("potential: |dh(r)| <= c0 + c1 |r|", bool(excess[k] <= 1e-10), float(r[k]),
                      f"excess {excess[k]:.3g}"))

    V = P.space
    Z1 = rng.standard_normal((n_samples, V.dim))
    Z2 = rng.standard_normal((n_samples, V.dim))
    conv = [P.phi(0.5 * (a + b)) - 0.5 * (P.phi(a) + P.phi(b)) for a, b in zip(Z1[:50], Z2[:50])]
    k = int(np.argmax(conv))
    out.append(Clause("phi convex", bool(conv[k] <= 1e-10), k))

    if P.radial:
        K = P.K
        t = rng.uniform(0, 5, 50)
        hom = [abs(K.r(s * z) - s * K.r(z)) for s, z in zip(t, Z1[:50])]
        sub = [K.r(a + b) - K.r(a) - K.r(b) for a, b in zip(Z1[:50], Z2[:50])]
        mv = [float(K.m(z)) for z in Z1[:50]]
        out.append(Clause("constraint: r positively homogeneous", bool(max(hom) <= 1e-9 * (1 + max(mv)))))
        out.append(Clause("constraint: r subadditive", bool(max(sub) <= 1e-9)))
        out.append(Clause("constraint: m >= rho >= r(0)", bool(min(mv) >= K.rho and K.r(np.zeros(V.dim)) <= K.rho),
                          None, f"min m {min(mv):.6g}, rho {K.rho:.6g}"))

    ok, margin = check_smallness(P)
    out.append(Clause("smallness sqrt(2) c1 ||M||^2 < alpha_a", ok, None, f"margin {margin:.6g}"))

    if problem.k2 is not None:
        k2 = problem.k2
        out.append(Clause("obstacle: k2 >= 0", bool(np.all(k2 >= 0)), int(np.argmin(k2))))
        out.append(Clause("obstacle: k2 not identically 0", bool(np.any(k2 > 0))))
    return HypothesisReport(out)


def write_nodal_csv(path, space: FEMSpace, u_free, header_line: Optional[str] = None) -> None:
    """One row per node: coordinates and the nodal value (zero on the clamped part)."""
    full = space.extend(u_free)
    cols = ["x"] if space.mesh.dim == 1 else ["x", "y"]
    with open(path, "w", newline="") as fh:
        if header_line:
            fh.write(header_line.rstrip("\n") + "\n")
        w = csv.writer(fh)
        w.writerow(cols + ["value"])
        for p, val in zip(space.mesh.nodes, full):
            w.writerow([repr(float(c)) for c in p] + [repr(float(val))])

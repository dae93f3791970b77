"""P1 finite elements on the unit interval and the unit square.

V is the space of continuous piecewise-linear functions vanishing on the
Dirichlet part, normed by ``||grad v||_{L^2}``; its Gram matrix is the
stiffness matrix on the free nodes.  The X-spaces (``L^2`` of the domain
and of a boundary part) use lumped, diagonal mass matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from ..errors import ProblemDataError
from ..hilbert import GramSpace, LinearMap, NonlinearOperator

__all__ = [
    "Mesh",
    "build_mesh",
    "FEMSpace",
    "MaterialLaw",
    "linear_iso",
    "nonlinear_demo",
    "assemble_operator",
    "assemble_embedding",
    "assemble_trace",
    "lumped_load",
    "error_norms",
    "write_mesh",
    "BOUNDARY_PRESETS",
]

SIDES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}

BOUNDARY_PRESETS = {
    1: {
        "full-dirichlet": {"left": "G1", "right": "G1"},
        "interior-model": {"left": "G1", "right": "G2"},
        "boundary-model": {"left": "S1", "right": "S2"},
    },
    2: {
        "full-dirichlet": {"left": "G1", "right": "G1", "bottom": "G1", "top": "G1"},
        "interior-model": {"left": "G1", "right": "G1", "bottom": "G2", "top": "G2"},
        # every edge needs a label, so the left side joins the clamped part
        "boundary-model": {"bottom": "S1", "left": "S1", "top": "S2", "right": "S3"},
    },
}
BOUNDARY_PRESETS[1]["both-ends-dirichlet"] = BOUNDARY_PRESETS[1]["full-dirichlet"]

DIRICHLET_LABELS = ("G1", "S1")


@dataclass
class Mesh:
    """Simplicial mesh with labeled boundary facets.

    In 1D the boundary facets are the two end nodes; in 2D they are edges.
    ``facets[k]`` lists the nodes of facet ``k`` and ``facet_labels[k]`` its
    part tag.
    """

    dim: int
    nodes: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_labels: np.ndarray
    n_cells_per_side: int

    @property
    def boundary_labels(self) -> dict:
        return {lab: np.flatnonzero(self.facet_labels == lab) for lab in np.unique(self.facet_labels)}

    def facet_measure(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(len(self.facets))
        p = self.nodes[self.facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def nodes_of(self, label: str) -> np.ndarray:
        mask = self.facet_labels == label
        return np.unique(self.facets[mask].ravel())

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells_per_side


def build_mesh(dim: int, n_cells: int, boundary_spec: Union[str, dict] = "full-dirichlet") -> Mesh:
    """Uniform interval mesh or structured right-triangle mesh of the unit square.

    ``boundary_spec`` is a preset name (``full-dirichlet``, ``interior-model``,
    ``boundary-model``) or a mapping from side name to part tag.  Tags ``G1``
    and ``S1`` mark the clamped (Dirichlet) part.
    """
    if dim not in (1, 2):
        raise ProblemDataError("dim must be 1 or 2")
    if n_cells < 2:
        raise ProblemDataError("n_cells must be at least 2")
    if isinstance(boundary_spec, str):
        try:
            sides = BOUNDARY_PRESETS[dim][boundary_spec]
        except KeyError:
            raise ProblemDataError(f"unknown boundary preset {boundary_spec!r}") from None
    else:
        sides = dict(boundary_spec)
    if set(sides) != set(SIDES[dim]):
        raise ProblemDataError(f"boundary spec must label exactly the sides {SIDES[dim]}")
    n = n_cells
    if dim == 1:
        nodes = np.linspace(0.0, 1.0, n + 1)[:, None]
        cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        facets = np.array([[0], [n]])
        labels = np.array([sides["left"], sides["right"]])
    else:
        x = np.linspace(0.0, 1.0, n + 1)
        X, Y = np.meshgrid(x, x, indexing="xy")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[j, i] at (x_i, y_j)
        p00, p10 = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
        p01, p11 = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
        cells = np.vstack([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
        side_nodes = {"bottom": idx[0, :], "top": idx[-1, :], "left": idx[:, 0], "right": idx[:, -1]}
        facets, labels = [], []
        for side in SIDES[2]:
            s = side_nodes[side]
            facets.append(np.column_stack([s[:-1], s[1:]]))
            labels += [sides[side]] * n
        facets = np.vstack(facets)
        labels = np.array(labels)
    mesh = Mesh(dim, nodes, cells, facets, labels, n)
    if not any(lab in DIRICHLET_LABELS for lab in labels):
        raise ProblemDataError("the clamped part (G1 or S1) must be nonempty")
    return mesh


def _cell_geometry(mesh: Mesh):
    """Measures and basis-function gradients, shape (n_cells, dim, dim + 1)."""
    P = mesh.nodes[mesh.cells]
    if mesh.dim == 1:
        h = P[:, 1, 0] - P[:, 0, 0]
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, None, :]
        return h, grads
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)  # columns are edge vectors
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise ProblemDataError("mesh has non-positively oriented cells")
    Jinv = np.linalg.inv(J)  # rows give gradients of the barycentrics 1 and 2
    g12 = np.transpose(Jinv, (0, 2, 1))  # (nc, dim, 2)
    g0 = -g12.sum(axis=2, keepdims=True)
    return 0.5 * det, np.concatenate([g0, g12], axis=2)


class FEMSpace:
    """Discrete spaces and metrics on a mesh.

    Attributes
    ----------
    free_nodes : indices of nodes off the clamped part
    gram_V : stiffness matrix on the free nodes (CSR)
    gram_X_domain : lumped mass on all nodes (diagonal entries)
    gram_X_boundary : lumped facet mass of the part ``boundary_label`` on free nodes
    """

    def __init__(self, mesh: Mesh, boundary_label: Optional[str] = None):
        self.mesh = mesh
        dirichlet = np.unique(np.concatenate(
            [mesh.nodes_of(lab) for lab in DIRICHLET_LABELS if np.any(mesh.facet_labels == lab)]))
        self.dirichlet_nodes = dirichlet
        self.free_nodes = np.setdiff1d(np.arange(len(mesh.nodes)), dirichlet)
        if self.free_nodes.size == 0:
            raise ProblemDataError("no free nodes")
        self.n_nodes = len(mesh.nodes)
        self.measures, self.grads = _cell_geometry(mesh)
        self.centroids = mesh.nodes[mesh.cells].mean(axis=1)
        self._G = self._gradient_matrix()
        K = self.stiffness()
        self.gram_V = K[self.free_nodes][:, self.free_nodes].tocsr()
        self.V = GramSpace(self.gram_V, "V")
        share = np.repeat(self.measures / (mesh.dim + 1), mesh.dim + 1)
        self.mass_lumped = np.bincount(mesh.cells.ravel(), weights=share, minlength=self.n_nodes)
        self.gram_X_domain = self.mass_lumped
        self.X_domain = GramSpace.diagonal(self.mass_lumped, "X")
        if boundary_label is None:
            boundary_label = "S2" if np.any(mesh.facet_labels == "S2") else "G2"
        self.boundary_label = boundary_label
        self.boundary_nodes, self.gram_X_boundary = self.boundary_mass(boundary_label)

    def _gradient_matrix(self):
        """Sparse map from nodal values to cellwise gradients, rows ordered (cell, component)."""
        nc, d, k = self.grads.shape
        rows = np.repeat(np.arange(nc * d), k)
        cols = np.repeat(self.mesh.cells, d, axis=0).ravel()
        return sp.csr_matrix((self.grads.ravel(), (rows, cols)), shape=(nc * d, self.n_nodes))

    def gradient_free(self):
        """Gradient matrix restricted to free-node coefficients."""
        return self._G[:, self.free_nodes].tocsr()

    def stiffness(self, coeff=None):
        """``sum_cells coeff |T| grad phi_i . grad phi_j`` on all nodes."""
        nc, d, _ = self.grads.shape
        c = np.ones(nc) if coeff is None else np.broadcast_to(np.asarray(coeff, dtype=float), (nc,))
        W = sp.diags(np.repeat(c * self.measures, d))
        return (self._G.T @ W @ self._G).tocsr()

    def boundary_mass(self, label: str):
        mesh = self.mesh
        mask = mesh.facet_labels == label
        if not np.any(mask):
            return np.empty(0, dtype=int), np.empty(0)
        meas = mesh.facet_measure()[mask]
        fac = mesh.facets[mask]
        share = np.repeat(meas / fac.shape[1], fac.shape[1])
        mass = np.bincount(fac.ravel(), weights=share, minlength=self.n_nodes)
        nodes = np.intersect1d(np.unique(fac.ravel()), self.free_nodes)
        return nodes, mass[nodes]

    def extend(self, u_free) -> np.ndarray:
        """Free-node coefficients to a full nodal vector (zero on the clamped part)."""
        full = np.zeros(self.n_nodes)
        full[self.free_nodes] = u_free
        return full

    def free_position(self, nodes) -> np.ndarray:
        return np.searchsorted(self.free_nodes, nodes)

    def interpolate(self, fun: Callable) -> np.ndarray:
        return np.asarray(fun(self.mesh.nodes), dtype=float)[self.free_nodes]

    def cell_gradients(self, u_free) -> np.ndarray:
        return (self._G @ self.extend(u_free)).reshape(-1, self.mesh.dim)


@dataclass(frozen=True)
class MaterialLaw:
    """Diffusion law ``a(x, xi)`` with growth constant ``m_a`` and monotonicity ``alpha_a``."""

    kind: str
    a_oracle: Callable
    m_a: float
    alpha_a: float
    coeff: Optional[Callable] = field(default=None, compare=False)

    def __call__(self, x, xi):
        return self.a_oracle(x, xi)


def linear_iso(c: Union[float, Callable] = 1.0, alpha_a=None, m_a=None) -> MaterialLaw:
    """``a(x, xi) = c(x) xi``; constants default to the range of ``c`` on ``[0, 1]^d`` samples."""
    coeff = c if callable(c) else (lambda x, c=float(c): np.full(np.shape(x)[0], c))
    if alpha_a is None or m_a is None:
        probe = np.random.default_rng(0).uniform(size=(4096, 2))
        vals = np.concatenate([coeff(probe[:, :1]), coeff(probe)]) if callable(c) else np.array([c])
        alpha_a = float(np.min(vals)) if alpha_a is None else alpha_a
        m_a = float(np.max(vals)) if m_a is None else m_a
    return MaterialLaw("linear-iso", lambda x, xi: coeff(x)[:, None] * xi, float(m_a), float(alpha_a), coeff)


def nonlinear_demo(alpha_a: float = 1.0, m_a: float = 2.0) -> MaterialLaw:
    """``a(xi) = (alpha_a + (m_a - alpha_a) / (1 + |xi|)) xi``.

    The radial profile ``t -> a(t)`` has slope and secant in
    ``[alpha_a, m_a]``, so the law is ``alpha_a``-strongly monotone and
    ``m_a``-Lipschitz.
    """
    if m_a < alpha_a:
        raise ProblemDataError("need m_a >= alpha_a")

    def a(x, xi):
        nrm = np.linalg.norm(xi, axis=-1, keepdims=True)
        return (alpha_a + (m_a - alpha_a) / (1.0 + nrm)) * xi

    return MaterialLaw("nonlinear-demo", a, float(m_a), float(alpha_a))


def assemble_operator(space: FEMSpace, law: MaterialLaw) -> NonlinearOperator:
    """``<A u, v> = sum_T |T| a(x_T, grad u) . grad v`` with centroid quadrature."""
    if law.kind == "linear-iso":
        c = law.coeff(space.centroids)
        K = space.stiffness(c)
        Kf = K[space.free_nodes][:, space.free_nodes].tocsr()
        return NonlinearOperator(lambda u: Kf @ u, law.alpha_a, law.m_a, space.V, Kf)
    G = space.gradient_free()
    GT = G.T.tocsr()
    d = space.mesh.dim
    w = np.repeat(space.measures, d)
    xc = space.centroids

    def apply(u):
        xi = (G @ u).reshape(-1, d)
        return GT @ (w * law(xc, xi).ravel())

    return NonlinearOperator(apply, law.alpha_a, law.m_a, space.V)


def assemble_embedding(space: FEMSpace) -> LinearMap:
    """Inclusion of V into nodal ``L^2(Omega)`` with the lumped mass metric."""
    n_free = space.free_nodes.size
    E = sp.csr_matrix((np.ones(n_free), (space.free_nodes, np.arange(n_free))),
                      shape=(space.n_nodes, n_free))
    return LinearMap(E, space.V, space.X_domain)


def assemble_trace(space: FEMSpace, label: Optional[str] = None) -> LinearMap:
    """Restriction of V to the free nodes of a boundary part."""
    label = space.boundary_label if label is None else label
    nodes, mass = space.boundary_mass(label)
    if nodes.size == 0:
        raise ProblemDataError(f"boundary part {label!r} has no free nodes")
    T = sp.csr_matrix((np.ones(nodes.size), (np.arange(nodes.size), space.free_position(nodes))),
                      shape=(nodes.size, space.free_nodes.size))
    return LinearMap(T, space.V, GramSpace.diagonal(mass, "X_boundary"))


def lumped_load(space: FEMSpace, g1) -> np.ndarray:
    """Dual vector ``f_i = mass_i g1(x_i)`` on the free nodes."""
    vals = np.asarray(g1(space.mesh.nodes) if callable(g1) else np.broadcast_to(g1, (space.n_nodes,)),
                      dtype=float)
    return (space.mass_lumped * vals)[space.free_nodes]


# degree-5 rule on the reference triangle (barycentric points, weights summing to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_TRI_PTS = np.array([[1 / 3, 1 / 3, 1 / 3],
                     [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
                     [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]])
_TRI_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def _quadrature(mesh: Mesh):
    if mesh.dim == 1:
        x, w = np.polynomial.legendre.leggauss(5)
        bary = np.column_stack([(1 - x) / 2, (1 + x) / 2])
        return bary, w / 2
    return _TRI_PTS, _TRI_W


def error_norms(space: FEMSpace, u_free, exact: Callable, exact_grad: Callable):
    """``(L2 error, H1-seminorm error)`` of a P1 field against a smooth function."""
    mesh = space.mesh
    bary, w = _quadrature(mesh)
    u_nodes = space.extend(u_free)[mesh.cells]  # (nc, d+1)
    P = mesh.nodes[mesh.cells]  # (nc, d+1, dim)
    xq = np.einsum("qk,ckd->cqd", bary, P)
    uh = u_nodes @ bary.T  # (nc, nq)
    gh = space.cell_gradients(u_free)  # (nc, dim)
    flat = xq.reshape(-1, mesh.dim)
    ue = np.asarray(exact(flat)).reshape(uh.shape)
    ge = np.asarray(exact_grad(flat)).reshape(uh.shape + (mesh.dim,))
    l2 = np.sqrt(np.sum(space.measures[:, None] * w * (ue - uh) ** 2))
    h1 = np.sqrt(np.sum(space.measures[:, None] * w * np.sum((ge - gh[:, None, :]) ** 2, axis=2)))
    return float(l2), float(h1)


def write_mesh(path, mesh: Mesh) -> None:
    """Node coordinates as triples ``index x y`` (``y = 0`` in 1D)."""
    with open(path, "w") as fh:
        fh.write(f"{len(mesh.nodes)} {mesh.dim} {len(mesh.cells)}\n")
        for i, p in enumerate(mesh.nodes):
            y = p[1] if mesh.dim == 2 else 0.0
            fh.write(f"{i} {p[0]!r} {y!r}\n")

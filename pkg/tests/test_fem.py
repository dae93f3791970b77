import numpy as np
import pytest

from qvhi.errors import ProblemDataError
from qvhi.hilbert import estimate_constants
from qvhi.problems.fem import (FEMSpace, assemble_embedding, assemble_operator, assemble_trace, build_mesh,
                               error_norms, linear_iso, lumped_load, nonlinear_demo, write_mesh)

PI = np.pi


def sine(dim):
    if dim == 1:
        return (lambda x: np.sin(PI * x[:, 0]), lambda x: (PI * np.cos(PI * x[:, 0]))[:, None],
                lambda x: PI ** 2 * np.sin(PI * x[:, 0]))
    return (lambda x: np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]),
            lambda x: PI * np.column_stack([np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1]),
                                            np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1])]),
            lambda x: 2 * PI ** 2 * np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]))


def test_mesh_counts():
    sp1 = FEMSpace(build_mesh(1, 4, "both-ends-dirichlet"))
    assert len(sp1.mesh.nodes) == 5 and sp1.free_nodes.size == 3
    m2 = build_mesh(2, 2)
    assert len(m2.nodes) == 9 and len(m2.cells) == 8
    with pytest.raises(ProblemDataError):
        build_mesh(1, 1)
    with pytest.raises(ProblemDataError):
        build_mesh(2, 4, "no-such-preset")


@pytest.mark.parametrize("preset", ["full-dirichlet", "interior-model", "boundary-model"])
def test_boundary_partition(preset):
    n = 6
    mesh = build_mesh(2, n, preset)
    # each perimeter edge appears exactly once and all facets are boundary edges
    assert len(mesh.facets) == 4 * n
    assert len({tuple(sorted(f)) for f in mesh.facets}) == 4 * n
    assert mesh.facet_measure().sum() == pytest.approx(4.0)
    mid = mesh.nodes[mesh.facets].mean(axis=1)
    on_edge = np.isclose(mid, 0) | np.isclose(mid, 1)
    assert np.all(on_edge.any(axis=1))
    assert set(mesh.facet_labels) <= {"G1", "G2", "S1", "S2", "S3"}


def test_cells_positively_oriented():
    mesh = build_mesh(2, 5)
    P = mesh.nodes[mesh.cells]
    det = (P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (P[:, 2, 0] - P[:, 0, 0]) * (P[:, 1, 1] - P[:, 0, 1])
    assert np.all(det > 0)


def test_stiffness_matches_gradient_energy():
    rng = np.random.default_rng(0)
    for dim in (1, 2):
        sp_ = FEMSpace(build_mesh(dim, 7))
        v = rng.standard_normal(sp_.free_nodes.size)
        grads = sp_.cell_gradients(v)
        energy = np.sum(sp_.measures * np.sum(grads ** 2, axis=1))
        assert sp_.V.norm(v) ** 2 == pytest.approx(energy, rel=1e-12)


def test_mass_lumped_sums_to_measure():
    for dim in (1, 2):
        sp_ = FEMSpace(build_mesh(dim, 5))
        assert sp_.mass_lumped.sum() == pytest.approx(1.0)
        assert np.all(sp_.mass_lumped > 0)


def test_operator_examples():
    sp_ = FEMSpace(build_mesh(2, 6))
    rng = np.random.default_rng(1)
    u = rng.standard_normal(sp_.free_nodes.size)
    A1 = assemble_operator(sp_, linear_iso(1.0))
    assert np.allclose(A1(u), sp_.gram_V @ u)
    A2 = assemble_operator(sp_, linear_iso(2.0))
    assert np.allclose(A2(u), 2 * (sp_.gram_V @ u))
    m, L = estimate_constants(A2, 30, seed=0)
    assert m == pytest.approx(2.0) and L == pytest.approx(2.0)


def test_nonlinear_law_constants():
    sp_ = FEMSpace(build_mesh(2, 6))
    law = nonlinear_demo(1.0, 2.0)
    A = assemble_operator(sp_, law)
    m, L = estimate_constants(A, 100, seed=0)
    assert m >= law.alpha_a - 0.01
    assert L <= law.m_a + 1e-9
    assert np.allclose(law(np.zeros((3, 2)), np.zeros((3, 2))), 0.0)


def test_embedding_norm_converges_to_inverse_pi():
    norms = []
    for n in (8, 16, 32, 64):
        sp_ = FEMSpace(build_mesh(1, n, "both-ends-dirichlet"))
        norms.append(assemble_embedding(sp_).operator_norm())
    gaps = np.abs(np.array(norms) - 1 / PI)
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] <= 0.02 / PI


def test_trace_examples():
    sp_ = FEMSpace(build_mesh(2, 4, "boundary-model"))
    T = assemble_trace(sp_, "S2")
    interior = np.zeros(sp_.free_nodes.size)
    x = sp_.mesh.nodes[sp_.free_nodes]
    inside = np.flatnonzero((x[:, 0] > 0.1) & (x[:, 0] < 0.9) & (x[:, 1] > 0.1) & (x[:, 1] < 0.9))
    interior[inside[0]] = 1.0
    assert np.all(T(interior) == 0.0)
    rng = np.random.default_rng(2)
    for M in (T, assemble_embedding(sp_)):
        for _ in range(100):
            w = rng.standard_normal(M.codomain.dim)
            v = rng.standard_normal(M.domain.dim)
            lhs = M.adjoint_apply(w) @ v
            rhs = M.codomain.inner(w, M(v))
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    with pytest.raises(ProblemDataError):
        assemble_trace(FEMSpace(build_mesh(2, 4, "full-dirichlet")), "S2")


@pytest.mark.parametrize("dim,ns", [(1, (8, 16, 32)), (2, (8, 16, 32))])
def test_manufactured_convergence(dim, ns):
    ex, gr, g1 = sine(dim)
    errs = []
    for n in ns:
        sp_ = FEMSpace(build_mesh(dim, n))
        u = sp_.V.solve(lumped_load(sp_, g1))
        errs.append(error_norms(sp_, u, ex, gr))
    errs = np.array(errs)
    l2_ratio = errs[:-1, 0] / errs[1:, 0]
    h1_ratio = errs[:-1, 1] / errs[1:, 1]
    assert np.all((3.4 <= l2_ratio) & (l2_ratio <= 4.6))
    assert np.all((1.7 <= h1_ratio) & (h1_ratio <= 2.3))


def test_error_norms_of_interpolant_of_linear_function():
    # P1 reproduces affine functions exactly, so both errors vanish
    sp_ = FEMSpace(build_mesh(2, 4, {"left": "G1", "right": "G2", "bottom": "G2", "top": "G2"}))
    ex = lambda x: x[:, 0]
    gr = lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))])
    l2, h1 = error_norms(sp_, sp_.interpolate(ex), ex, gr)
    assert l2 <= 1e-12 and h1 <= 1e-12


def test_write_mesh(tmp_path):
    mesh = build_mesh(2, 2)
    write_mesh(tmp_path / "mesh.txt", mesh)
    lines = (tmp_path / "mesh.txt").read_text().splitlines()
    assert lines[0].split() == ["9", "2", "8"] and len(lines) == 10

import numpy as np
import pytest

from graphon_forge.graph_sampler import SparseGraph, sample_graph
from graphon_forge.graphon_model import StepGraphon
from graphon_forge.nonbacktracking import (
    DegenerateSpectrumError,
    OrientedEdgeSpace,
    build_nb_operator,
    classify_eigenvalues,
    default_e1,
    dense_nb_matrix,
    ihara_bass_dense,
    ihara_bass_reduce,
    top_spectrum,
    vertex_aggregates,
)
from tests.conftest import random_simple_graph

PATH3 = SparseGraph(3, np.array([[0, 1], [1, 2]]))
TRIANGLE = SparseGraph(3, np.array([[0, 1], [0, 2], [1, 2]]))


def brute_force_nb_matrix(gr: SparseGraph) -> np.ndarray:
    """Independent construction straight from the indicator definition."""
    space = OrientedEdgeSpace.from_graph(gr)
    m = space.m_oriented
    out = np.zeros((m, m))
    for f in range(m):
        for e in range(m):
            feeds = space.heads[e] == space.tails[f]
            reverses = space.tails[e] == space.heads[f] and space.heads[e] == space.tails[f]
            out[f, e] = 1.0 if feeds and not reverses else 0.0
    return out


class TestOperator:
    def test_matches_definition_on_random_graphs(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(4, 12))
            edges = random_simple_graph(rng, n, 0.4)
            if edges.shape[0] == 0:
                continue
            gr = SparseGraph(n, edges)
            op = build_nb_operator(gr)
            np.testing.assert_allclose(dense_nb_matrix(op), brute_force_nb_matrix(gr), atol=0)

    def test_path_is_nilpotent(self):
        op = build_nb_operator(PATH3)
        x = np.arange(1.0, 5.0)
        np.testing.assert_allclose(op.matvec(op.matvec(x)), 0.0, atol=1e-15)

    def test_triangle_spectrum(self):
        w = np.linalg.eigvals(dense_nb_matrix(build_nb_operator(TRIANGLE)))
        omega = np.exp(2j * np.pi / 3)
        expected = np.array([1, 1, omega, omega, omega.conjugate(), omega.conjugate()])
        np.testing.assert_allclose(
            np.sort_complex(np.round(w, 12)), np.sort_complex(expected), atol=1e-9
        )

    def test_disjoint_union_is_block_diagonal(self):
        two = SparseGraph(6, np.array([[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]]))
        op = build_nb_operator(two)
        one = build_nb_operator(TRIANGLE)
        x = np.arange(1.0, 13.0)
        got = op.matvec(x)
        np.testing.assert_allclose(got[:6], one.matvec(x[:6]), atol=0)
        np.testing.assert_allclose(got[6:], one.matvec(x[6:]), atol=0)

    def test_matvec_equals_explicit_sparse_multiply(self):
        from scipy import sparse

        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(5, 24))
            edges = random_simple_graph(rng, n, 0.3)
            if edges.shape[0] == 0:
                continue
            gr = SparseGraph(n, edges)
            op = build_nb_operator(gr)
            if op.dim > 1000:
                continue
            mat = sparse.csr_matrix(dense_nb_matrix(op))
            x = rng.standard_normal(op.dim)
            np.testing.assert_allclose(op.matvec(x), mat @ x, atol=1e-12)

    def test_scale_multiplies(self):
        op1 = build_nb_operator(TRIANGLE)
        op2 = build_nb_operator(TRIANGLE, scale=2.5)
        x = np.arange(1.0, 7.0)
        np.testing.assert_allclose(op2.matvec(x), 2.5 * op1.matvec(x), atol=0)

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            build_nb_operator(SparseGraph(3, np.empty((0, 2), dtype=np.int64)))


class TestVertexAggregates:
    def test_single_edge(self):
        gr = SparseGraph(2, np.array([[0, 1]]))
        space = OrientedEdgeSpace.from_graph(gr)
        # oriented order: (0->1), (1->0)
        xi = np.array([[2.0], [5.0]])
        agg = vertex_aggregates(xi, space)
        assert agg[0, 0] == 5.0  # edges with head 0: (1->0)
        assert agg[1, 0] == 2.0

    def test_total_mass_identity(self):
        rng = np.random.default_rng(2)
        gr = SparseGraph(8, random_simple_graph(rng, 8, 0.5))
        space = OrientedEdgeSpace.from_graph(gr)
        xi = rng.standard_normal((space.m_oriented, 3))
        agg = vertex_aggregates(xi, space)
        np.testing.assert_allclose(agg.sum(axis=0), xi.sum(axis=0), atol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(4, 10))
            edges = random_simple_graph(rng, n, 0.5)
            if edges.shape[0] == 0:
                continue
            gr = SparseGraph(n, edges)
            space = OrientedEdgeSpace.from_graph(gr)
            xi = rng.standard_normal(space.m_oriented)
            want = np.zeros(n)
            for e in range(space.m_oriented):
                want[space.heads[e]] += xi[e]
            np.testing.assert_allclose(vertex_aggregates(xi, space)[:, 0], want, atol=1e-12)

    def test_inverse_involution(self):
        space = OrientedEdgeSpace.from_graph(TRIANGLE)
        e = np.arange(space.m_oriented)
        np.testing.assert_array_equal(space.inverse(space.inverse(e)), e)


def spectrum_oracle(gr: SparseGraph, n: int, e1=None, k_cap=8, bulk_scale=1.0):
    """Dense-eigensolve reference for the accepted set."""
    w = np.linalg.eigvals(dense_nb_matrix(build_nb_operator(gr)))
    e1 = default_e1(n) if e1 is None else e1
    lam1, accepted, cutoff = classify_eigenvalues(w, e1, k_cap, bulk_scale)
    lams = np.array(sorted((w[i].real for i in accepted), key=lambda t: -abs(t)))
    return lam1, lams, cutoff


class TestTopSpectrum:
    def test_matches_dense_oracle_small_graphs(self):
        rng = np.random.default_rng(4)
        done = 0
        while done < 40:
            n = int(rng.integers(12, 31))
            c = rng.uniform(2.5, 6.0)
            gr = SparseGraph(n, random_simple_graph(rng, n, c / n))
            if gr.m < 8:
                continue
            try:
                lam1, lams, _ = spectrum_oracle(gr, n)
            except DegenerateSpectrumError:
                continue
            spec = top_spectrum(build_nb_operator(gr), n, seed=done)
            assert spec.K == lams.size
            np.testing.assert_allclose(spec.lambdas, lams, atol=1e-8)
            assert spec.residuals.size == 0 or spec.residuals.max() <= 1e-6
            done += 1

    def test_residuals_and_unit_norm(self, assortative_2block):
        gr, _ = sample_graph(assortative_2block, 20000, seed=0)
        spec = top_spectrum(build_nb_operator(gr), 20000, seed=0)
        assert spec.K == 2
        np.testing.assert_allclose(np.linalg.norm(spec.eigenvectors, axis=0), 1.0, atol=1e-10)
        assert spec.residuals.max() <= 1e-6

    def test_k_monotone_in_e1(self, assortative_2block):
        gr, _ = sample_graph(assortative_2block, 20000, seed=1)
        op = build_nb_operator(gr)
        ks = [top_spectrum(op, 20000, e1_override=e1, seed=1).K for e1 in (0.05, 0.3, 1.0, 2.5)]
        assert all(a >= b for a, b in zip(ks, ks[1:]))

    def test_lambda1_estimates_degree(self, assortative_2block):
        hits = 0
        for seed in range(3):
            gr, _ = sample_graph(assortative_2block, 50000, seed=30 + seed)
            spec = top_spectrum(build_nb_operator(gr), 50000, seed=seed)
            hits += abs(spec.lambdas[0] - 4.0) <= 0.5
        assert hits >= 2

    def test_degenerate_on_forest(self):
        with pytest.raises(DegenerateSpectrumError):
            top_spectrum(build_nb_operator(PATH3), 3, seed=0)

    def test_aggregates_shape(self, assortative_2block):
        gr, _ = sample_graph(assortative_2block, 20000, seed=2)
        spec = top_spectrum(build_nb_operator(gr), 20000, seed=2)
        assert spec.vertex_aggregates.shape == (20000, spec.K)


class TestIharaBass:
    def test_triangle_contains_nb_spectrum(self):
        w = np.linalg.eigvals(ihara_bass_dense(TRIANGLE))
        nbw = np.linalg.eigvals(dense_nb_matrix(build_nb_operator(TRIANGLE)))
        np.testing.assert_allclose(
            np.sort_complex(np.round(w, 10)), np.sort_complex(np.round(nbw, 10)), atol=1e-8
        )

    def test_path_nonunit_eigenvalues_vanish(self):
        w = np.linalg.eigvals(ihara_bass_dense(PATH3))
        nonunit = w[np.abs(np.abs(w) - 1.0) > 1e-8]
        np.testing.assert_allclose(nonunit, 0.0, atol=1e-8)

    def test_matches_nb_on_random_graphs(self):
        rng = np.random.default_rng(5)
        done = 0
        while done < 20:
            n = int(rng.integers(8, 31))
            gr = SparseGraph(n, random_simple_graph(rng, n, 3.5 / n))
            if gr.m < 6:
                continue
            wb = np.linalg.eigvals(dense_nb_matrix(build_nb_operator(gr)))
            wc = np.linalg.eigvals(ihara_bass_dense(gr))
            top_b = np.sort([abs(x) for x in wb if abs(abs(x) - 1) > 1e-6])[::-1][:3]
            top_c = np.sort([abs(x) for x in wc if abs(abs(x) - 1) > 1e-6])[::-1][:3]
            k = min(top_b.size, top_c.size)
            np.testing.assert_allclose(top_b[:k], top_c[:k], atol=1e-8)
            done += 1

    def test_operator_matches_dense(self):
        rng = np.random.default_rng(6)
        gr = SparseGraph(10, random_simple_graph(rng, 10, 0.4))
        lo = ihara_bass_reduce(gr)
        dense = ihara_bass_dense(gr)
        x = rng.standard_normal(2 * gr.n)
        np.testing.assert_allclose(lo @ x, dense @ x, atol=1e-12)

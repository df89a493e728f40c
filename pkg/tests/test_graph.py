import numpy as np
import pytest

from cellgraph.autodiff import ParamStore
from cellgraph.graph import (CellFeatureGraph, EdgeScaling, GeneSetCollection,
                             augment_with_pathways, build_bipartite,
                             init_embeddings)
from cellgraph.linalg import SparseMatrix, cosine_similarity_columns


def graph_from(dense):
    return build_bipartite(SparseMatrix.from_dense(np.asarray(dense, float)))


class TestBuildBipartite:
    def test_direct_transcription(self):
        g = graph_from([[1.0, 0.0], [0.0, 2.0]])
        edges = set(zip(g.cf_cells.tolist(), g.cf_features.tolist(),
                        g.cf_weights.tolist()))
        assert edges == {(0, 0, 1.0), (1, 1, 2.0)}
        assert g.n_cells == 2 and g.n_features == 2
        assert not g.has_pathways

    def test_zero_matrix_warns(self):
        with pytest.warns(UserWarning, match="edgeless"):
            g = build_bipartite(SparseMatrix.from_coo(3, 2, [], [], []))
        assert g.n_edges == 0

    def test_edge_count_equals_nnz(self):
        rng = np.random.default_rng(0)
        dense = rng.standard_normal((10, 6)) * (rng.random((10, 6)) < 0.35)
        m = SparseMatrix.from_dense(dense)
        assert build_bipartite(m).n_edges == m.nnz

    def test_round_trip_reproduces_matrix(self):
        rng = np.random.default_rng(1)
        dense = rng.standard_normal((8, 5)) * (rng.random((8, 5)) < 0.4)
        g = graph_from(dense)
        assert np.array_equal(g.to_modality_matrix().to_dense(), dense)


class TestAugmentWithPathways:
    def test_identical_columns_give_unit_edge(self):
        m = SparseMatrix.from_dense(np.array([[1.0, 1.0], [2.0, 2.0]]))
        g = augment_with_pathways(build_bipartite(m),
                                  GeneSetCollection([("s", [0, 1])]), m)
        assert len(g.ff_weights) == 1
        assert g.ff_weights[0] == pytest.approx(1.0)
        assert (g.ff_i[0], g.ff_j[0]) == (0, 1)

    def test_singleton_set_adds_nothing(self):
        m = SparseMatrix.identity(3)
        g = augment_with_pathways(build_bipartite(m),
                                  GeneSetCollection([("s", [1])]), m)
        assert not g.has_pathways

    def test_overlapping_sets_enumerate_distinct_pairs(self):
        rng = np.random.default_rng(2)
        dense = np.abs(rng.standard_normal((12, 5))) + 0.1
        m = SparseMatrix.from_dense(dense)
        sets = GeneSetCollection([("a", [0, 1, 2]), ("b", [1, 2, 3])])
        g = augment_with_pathways(build_bipartite(m), sets, m)
        expected = {(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)}
        got = set(zip(g.ff_i.tolist(), g.ff_j.tolist()))
        positive = {p for p in expected
                    if cosine_similarity_columns(m, *p) > 0}
        assert got == positive
        for i, j, w in zip(g.ff_i, g.ff_j, g.ff_weights):
            assert w == pytest.approx(cosine_similarity_columns(m, i, j))

    def test_nonpositive_cosine_dropped(self):
        m = SparseMatrix.from_dense(np.array([[1.0, -1.0], [1.0, -1.0]]))
        g = augment_with_pathways(build_bipartite(m),
                                  GeneSetCollection([("s", [0, 1])]), m)
        assert not g.has_pathways

    def test_cell_feature_edges_untouched(self):
        rng = np.random.default_rng(3)
        dense = np.abs(rng.standard_normal((6, 4)))
        m = SparseMatrix.from_dense(dense)
        g0 = build_bipartite(m)
        g1 = augment_with_pathways(g0, GeneSetCollection([("s", [0, 1, 2])]), m)
        assert np.array_equal(g0.cf_weights, g1.cf_weights)
        assert np.array_equal(g0.cf_cells, g1.cf_cells)

    def test_member_out_of_range(self):
        m = SparseMatrix.identity(2)
        with pytest.raises(ValueError, match="out of range"):
            augment_with_pathways(build_bipartite(m),
                                  GeneSetCollection([("s", [0, 7])]), m)


class TestScaledWeights:
    def test_symmetric_mode_requires_positive_sums(self):
        g = graph_from([[1.0, -2.0], [0.5, 0.0]])
        g.normalization_mode = EdgeScaling.SYMMETRIC
        with pytest.raises(Exception, match="min_max_scale"):
            g.scaled_weights()

    def test_min_max_mode_in_unit_interval(self):
        g = graph_from([[1.0, -2.0], [0.5, 3.0]])
        g.normalization_mode = EdgeScaling.MIN_MAX
        cf, _ = g.scaled_weights()
        assert cf.min() >= 0.0 and cf.max() <= 1.0

    def test_post_norm_mode_keeps_raw_weights(self):
        g = graph_from([[1.0, -2.0], [0.5, 3.0]])
        g.normalization_mode = EdgeScaling.POST_NORM
        cf, _ = g.scaled_weights()
        assert np.array_equal(cf, g.cf_weights)

    def test_whole_graph_symmetry(self):
        rng = np.random.default_rng(4)
        dense = np.abs(rng.standard_normal((7, 5))) * (rng.random((7, 5)) < 0.6)
        dense[dense.sum(axis=1) == 0, 0] = 1.0
        col_fix = dense.sum(axis=0) == 0
        dense[0, col_fix] = 1.0
        g = graph_from(dense)
        g.normalization_mode = EdgeScaling.SYMMETRIC
        cells_from_features, features_from_cells, _ = g.operators()
        assert np.allclose(cells_from_features.to_dense(),
                           features_from_cells.to_dense().T)


class TestInitEmbeddings:
    def test_one_hot_identity(self):
        g = graph_from(np.ones((2, 3)))
        x = init_embeddings(g, "one_hot")
        assert np.array_equal(x.feature_embed, np.eye(3))

    def test_cell_embed_zeros_column(self):
        g = graph_from(np.ones((5, 2)))
        x = init_embeddings(g, "one_hot")
        assert x.cell_embed.shape == (5, 1)
        assert np.all(x.cell_embed == 0)

    def test_learned_table_bounds_and_determinism(self):
        g = graph_from(np.ones((4, 100)))
        store = ParamStore()
        x = init_embeddings(g, "learned", table_dim=16, store=store, seed=5)
        assert x.feature_embed.shape == (100, 16)
        bound = 1 / np.sqrt(16)
        assert np.all(np.abs(x.feature_embed) <= bound)
        assert x.feature_param == "feature_table"
        assert np.array_equal(store.value("feature_table"), x.feature_embed)
        again = init_embeddings(g, "learned", table_dim=16, seed=5)
        assert np.array_equal(again.feature_embed, x.feature_embed)

    def test_learned_table_dim_zero_rejected(self):
        g = graph_from(np.ones((2, 3)))
        with pytest.raises(ValueError):
            init_embeddings(g, "learned", table_dim=0)

    def test_auto_switches_on_feature_count(self):
        small = init_embeddings(graph_from(np.ones((2, 3))), "auto",
                                table_dim=8)
        assert small.feature_embed.shape == (3, 3)
        big = CellFeatureGraph(n_cells=2, n_features=2001,
                               cf_cells=np.array([0]),
                               cf_features=np.array([0]),
                               cf_weights=np.array([1.0]))
        learned = init_embeddings(big, "auto", table_dim=8)
        assert learned.feature_embed.shape == (2001, 8)

import numpy as np
import pytest

from cellgraph.autodiff import ParamStore, Tape
from cellgraph.convnet import ConvConfig
from cellgraph.data import generate_synthetic
from cellgraph.graph import EdgeScaling, build_bipartite
from cellgraph.linalg import SparseMatrix, l2_normalize_rows
from cellgraph.tasks import (EmbedConfig, MatcherConfig, TrainProtocol,
                             competition_match_score, joint_embedding_loss,
                             match_inference, match_scores, matching_losses,
                             mean_predictor_rmse, pca_concat_baseline,
                             register_aux_params, register_embed_params,
                             rmse_loss, score_probabilities, split_cells,
                             train_joint_embedding, train_prediction)
from cellgraph.tasks.embedding import EMBED_LR
from cellgraph.metrics import nmi_cluster_label


def match_loss_values(h1, h2, truth, store=None, aux=None, aux_weight=1.0):
    tape = Tape(store or ParamStore(), train=False)
    total, match, aux_part = matching_losses(
        tape, tape.constant(h1), tape.constant(h2), truth,
        aux_targets=aux, aux_weight=aux_weight,
    )
    return (float(np.asarray(tape.value(total))),
            float(np.asarray(tape.value(match))),
            float(np.asarray(tape.value(aux_part))))


class TestRmseLoss:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        assert rmse_loss(x, x) == 0.0

    def test_constant_offset(self):
        x = np.zeros((2, 5))
        assert rmse_loss(x + 0.7, x) == pytest.approx(0.7)
        assert rmse_loss(x - 0.7, x) == pytest.approx(0.7)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        brute = np.sqrt(sum((a[i, j] - b[i, j]) ** 2
                            for i in range(4) for j in range(3)) / 12)
        assert rmse_loss(a, b) == pytest.approx(brute)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestMatchingLosses:
    def test_scaled_identity_hand_softmax(self):
        h = np.eye(2) * 3.0
        _, match, _ = match_loss_values(h, h, np.array([0, 1]))
        expected = -4.0 * np.log(np.e / (np.e + 1.0))
        assert match == pytest.approx(expected, abs=1e-12)

    def test_permuted_truth_scores_worse(self):
        h = np.eye(2) * 3.0
        _, aligned, _ = match_loss_values(h, h, np.array([0, 1]))
        _, permuted, _ = match_loss_values(h, h, np.array([1, 0]))
        assert permuted > aligned

    def test_aux_zero_when_outputs_equal_targets(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((3, 4))
        store = ParamStore()
        register_aux_params(store, 4, 2, 2, seed=0)
        for name in store.names():
            store.entries[name].value[:] = 0.0
        zeros = np.zeros((3, 2))
        total, match, aux = match_loss_values(
            h, h, np.arange(3), store=store, aux=(zeros, zeros))
        assert aux == pytest.approx(0.0, abs=1e-15)
        assert total == pytest.approx(match)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        h1 = rng.standard_normal((5, 4))
        h2 = rng.standard_normal((5, 4))
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        t = rng.permutation(5)
        _, base, _ = match_loss_values(h1, h2, t)
        _, rotated, _ = match_loss_values(h1 @ q, h2 @ q, t)
        assert rotated == pytest.approx(base, abs=1e-9)

    def test_non_bijection_rejected(self):
        h = np.eye(3)
        with pytest.raises(ValueError, match="bijection"):
            match_loss_values(h, h, np.array([0, 0, 1]))


class TestScoreProbabilities:
    def test_rows_and_columns_stochastic(self):
        rng = np.random.default_rng(4)
        for shape in [(5, 5), (40, 40), (200, 200)]:
            s = rng.standard_normal(shape) * 5
            rp, cp = score_probabilities(s)
            assert np.abs(rp.sum(axis=1) - 1).max() < 1e-6
            assert np.abs(cp.sum(axis=0) - 1).max() < 1e-6


class TestCompetitionScore:
    def test_one_hot_perfect(self):
        n = 6
        t = np.random.default_rng(5).permutation(n)
        prob = np.zeros((n, n))
        prob[np.arange(n), t] = 1.0
        assert competition_match_score(prob, t) == float(n)

    def test_uniform_chance_level(self):
        n = 8
        prob = np.full((n, n), 1.0 / n)
        assert competition_match_score(prob, np.arange(n)) \
            == pytest.approx(1.0)

    def test_matches_direct_indexing(self):
        rng = np.random.default_rng(6)
        prob = rng.random((7, 7))
        prob /= prob.sum(axis=1, keepdims=True)
        t = rng.permutation(7)
        direct = sum(prob[i, t[i]] for i in range(7))
        assert competition_match_score(prob, t) == pytest.approx(direct)


class TestMatchInference:
    def test_separable_instance_recovers_truth(self):
        rng = np.random.default_rng(7)
        base = rng.standard_normal((4, 6)) * 3
        h1 = base + rng.normal(0, 0.01, base.shape)
        perm = np.array([2, 3, 0, 1])  # partner rows in h2
        h2 = np.empty_like(base)
        h2[perm] = base + rng.normal(0, 0.01, base.shape)
        batches1 = np.array([0, 0, 1, 1])
        batches2 = batches1[np.argsort(perm)]  # batch of each h2 row
        out = match_inference(h1, h2, batches1, batches2, percentile=0.0)
        scores = match_scores(out, perm)
        assert scores["top1_accuracy"] == 1.0
        assert scores["score_assignment"] == 4.0

    def test_percentile_zero_equals_full_hungarian(self):
        from cellgraph.assignment import AssignmentProblem, solve

        rng = np.random.default_rng(8)
        h1 = rng.standard_normal((6, 3))
        h2 = rng.standard_normal((6, 3))
        batches = np.zeros(6, dtype=int)
        out = match_inference(h1, h2, batches, batches, percentile=0.0)
        full = solve(AssignmentProblem(
            l2_normalize_rows(h1) @ l2_normalize_rows(h2).T))
        assert out.assignment == full.pairs

    def test_cross_batch_pairs_never_assigned(self):
        rng = np.random.default_rng(9)
        h1 = rng.standard_normal((10, 4))
        h2 = rng.standard_normal((10, 4))
        b1 = np.repeat([0, 1], 5)
        b2 = np.repeat([0, 1], 5)
        out = match_inference(h1, h2, b1, b2, percentile=50.0)
        for i, j in out.assignment:
            assert b1[i] == b2[j]

    def test_one_sided_batch_reported_unmatched(self):
        rng = np.random.default_rng(10)
        h1 = rng.standard_normal((4, 3))
        h2 = rng.standard_normal((4, 3))
        b1 = np.array([0, 0, 7, 7])  # batch 7 absent on the right
        b2 = np.array([0, 0, 1, 1])
        out = match_inference(h1, h2, b1, b2, percentile=0.0)
        assert 2 in out.unmatched_left and 3 in out.unmatched_left
        assert 2 in out.unmatched_right and 3 in out.unmatched_right
        assert np.all(out.row_prob[2] == 0)
        # matched block rows are stochastic
        assert out.row_prob[0].sum() == pytest.approx(1.0, abs=1e-9)

    def test_dual_symmetry(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            n = int(rng.integers(6, 30))
            h1 = rng.standard_normal((n, 5))
            h2 = rng.standard_normal((n, 5))
            batches = rng.integers(0, 2, n)
            fwd = match_inference(h1, h2, batches, batches, percentile=30.0)
            rev = match_inference(h2, h1, batches, batches, percentile=30.0)
            assert sorted((j, i) for i, j in rev.assignment) == fwd.assignment
            truth = np.arange(n)
            s_fwd = match_scores(fwd, truth)
            s_rev = match_scores(rev, truth)
            assert s_fwd["score_softmax"] == pytest.approx(
                s_rev["score_softmax"], abs=1e-9)
            assert s_fwd["score_assignment"] == s_rev["score_assignment"]


class TestTrainPrediction:
    def _linear_dataset(self, n=200, seed=12):
        rng = np.random.default_rng(seed)
        source = np.abs(rng.standard_normal((n, 12))) + 0.05
        target = source[:, :1] * 2.0  # first column, linear signal
        return SparseMatrix.from_dense(source), target

    def test_beats_mean_predictor_on_linear_signal(self):
        m, target = self._linear_dataset()
        g = build_bipartite(m)
        g.normalization_mode = EdgeScaling.POST_NORM
        cfg = ConvConfig(n_layers=2, hidden_dim=16, dropout_rate=0.0,
                         aggregation_norm=EdgeScaling.POST_NORM)
        protocol = TrainProtocol(patience_epochs=40, max_epochs=300, seed=0)
        model = train_prediction(g, target, cfg, protocol)
        baseline = mean_predictor_rmse(target, model.train_idx, model.val_idx)
        assert model.validation_rmse < 0.5 * baseline

    def test_patience_halts_when_metric_cannot_improve(self):
        m, _ = self._linear_dataset(n=60)
        target = np.zeros((60, 2))
        g = build_bipartite(m)
        g.normalization_mode = EdgeScaling.POST_NORM
        cfg = ConvConfig(n_layers=1, hidden_dim=8, dropout_rate=0.0,
                         aggregation_norm=EdgeScaling.POST_NORM)
        # lr 0 freezes the parameters, so validation never improves
        protocol = TrainProtocol(patience_epochs=5, max_epochs=400, seed=0,
                                 lr=0.0)
        model = train_prediction(g, target, cfg, protocol)
        assert model.best_epoch == 0
        assert len(model.history) == 6  # best epoch + patience

    def test_deterministic_validation_curves(self):
        m, target = self._linear_dataset(n=80)

        def run():
            g = build_bipartite(m)
            g.normalization_mode = EdgeScaling.POST_NORM
            cfg = ConvConfig(n_layers=1, hidden_dim=8, dropout_rate=0.3,
                             aggregation_norm=EdgeScaling.POST_NORM)
            protocol = TrainProtocol(patience_epochs=10, max_epochs=40,
                                     seed=3)
            model = train_prediction(g, target, cfg, protocol)
            return [rec.val_metric for rec in model.history]

        assert run() == run()

    def test_target_row_count_checked(self):
        m, target = self._linear_dataset(n=50)
        g = build_bipartite(m)
        with pytest.raises(ValueError, match="target rows"):
            train_prediction(g, target[:20],
                             ConvConfig(n_layers=1, hidden_dim=4),
                             TrainProtocol())

    def test_pathway_channel_with_learnable_alpha_trains(self):
        from cellgraph.graph import GeneSetCollection

        m, target = self._linear_dataset(n=60)
        g = build_bipartite(m)
        g.normalization_mode = EdgeScaling.POST_NORM
        sets = GeneSetCollection([("s1", [0, 1, 2]), ("s2", [2, 3])])
        cfg = ConvConfig(n_layers=2, hidden_dim=8, dropout_rate=0.0,
                         aggregation_norm=EdgeScaling.POST_NORM,
                         use_pathway_channel=True, alpha="learnable")
        protocol = TrainProtocol(patience_epochs=10, max_epochs=40, seed=0)
        model = train_prediction(g, target, cfg, protocol, gene_sets=sets,
                                 source=m)
        assert model.graph.has_pathways
        assert "alpha" in model.store
        assert np.isfinite(model.validation_rmse)

    def test_strict_inductive_mode(self):
        m, target = self._linear_dataset(n=80)
        g = build_bipartite(m)
        g.normalization_mode = EdgeScaling.POST_NORM
        cfg = ConvConfig(n_layers=1, hidden_dim=8, dropout_rate=0.0,
                         aggregation_norm=EdgeScaling.POST_NORM)
        protocol = TrainProtocol(patience_epochs=15, max_epochs=80, seed=0)
        model = train_prediction(g, target, cfg, protocol,
                                 transductive=False)
        assert np.isfinite(model.validation_rmse)


class TestJointEmbeddingLoss:
    def _store(self, d, out_dim, seed=0):
        store = ParamStore()
        register_embed_params(store, d, out_dim, seed)
        return store

    def test_masked_all_unlabeled_gives_zero_celltype(self):
        rng = np.random.default_rng(13)
        store = self._store(6, 4)
        tape = Tape(store, train=False)
        h = tape.constant(rng.standard_normal((5, 6)))
        _, _, celltype, _ = joint_embedding_loss(
            tape, h, rng.standard_normal((5, 4)), np.full(5, -1), 3, 0.1)
        assert float(np.asarray(tape.value(celltype))) == 0.0

    def test_zero_rest_dims_zero_regular(self):
        rng = np.random.default_rng(14)
        store = self._store(5, 3)
        tape = Tape(store, train=False)
        h_val = np.zeros((4, 5))
        h_val[:, :2] = rng.standard_normal((4, 2))
        h = tape.constant(h_val)
        _, _, _, regular = joint_embedding_loss(
            tape, h, rng.standard_normal((4, 3)), np.zeros(4, dtype=int),
            2, 0.5)
        assert float(np.asarray(tape.value(regular))) == 0.0

    def test_aligned_logits_celltype_tail_bound(self):
        # margin-10 one-hot logits: per-cell CE = log(1 + (T-1)e^{-10})
        rng = np.random.default_rng(15)
        n, t_dims, d = 12, 3, 8
        labels = rng.integers(0, t_dims, n)
        h_val = np.zeros((n, d))
        h_val[np.arange(n), labels] = 10.0
        store = self._store(d, 4)
        tape = Tape(store, train=False)
        _, _, celltype, _ = joint_embedding_loss(
            tape, tape.constant(h_val), rng.standard_normal((n, 4)),
            labels, t_dims, 0.0)
        per_cell = np.log(1 + (t_dims - 1) * np.exp(-10.0))
        value = float(np.asarray(tape.value(celltype)))
        assert value == pytest.approx(per_cell, rel=1e-9)
        assert value * n < 1e-4 * n  # spec tail bound at margin 10

    def test_recon_zero_when_network_reproduces_input(self):
        store = self._store(4, 4, seed=1)
        for name in store.names():
            store.entries[name].value[:] = 0.0
        # zero net output: recon equals mse(0, x) = mean x^2
        rng = np.random.default_rng(16)
        x = rng.standard_normal((6, 4))
        tape = Tape(store, train=False)
        _, recon, _, _ = joint_embedding_loss(
            tape, tape.constant(rng.standard_normal((6, 4))), x,
            np.zeros(6, dtype=int), 2, 0.0)
        assert float(np.asarray(tape.value(recon))) \
            == pytest.approx((x ** 2).mean())

    def test_label_out_of_range_rejected(self):
        store = self._store(5, 3)
        tape = Tape(store, train=False)
        h = tape.constant(np.zeros((3, 5)))
        with pytest.raises(ValueError, match="out of range"):
            joint_embedding_loss(tape, h, np.zeros((3, 3)),
                                 np.array([0, 1, 3]), 3, 0.1)


class TestTrainJointEmbedding:
    def _dataset(self, seed=17):
        return generate_synthetic(150, dims=(40, 30), n_types=3,
                                  n_batches=2, noise=0.05, dropout=0.2,
                                  seed=seed)

    def test_type_probabilities_rows_sum_to_one(self):
        ds = self._dataset()
        cfg = EmbedConfig(lsi_rank=16)
        cfg.conv.hidden_dim = 24
        protocol = TrainProtocol(patience_epochs=20, max_epochs=60, seed=0)
        model = train_joint_embedding(ds.modality_1, ds.modality_2_aligned(),
                                      ds.cell_type_labels, protocol, cfg)
        emb = model.embed()
        probs = emb.type_probabilities()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
        assert emb.cell_type_dims == 3

    def test_deterministic_per_seed(self):
        ds = self._dataset()

        def run():
            cfg = EmbedConfig(lsi_rank=12)
            cfg.conv.hidden_dim = 16
            protocol = TrainProtocol(patience_epochs=10, max_epochs=25,
                                     seed=5)
            model = train_joint_embedding(
                ds.modality_1, ds.modality_2_aligned(),
                ds.cell_type_labels, protocol, cfg)
            return model.embed().embedding

        assert np.array_equal(run(), run())

    def test_unaligned_rows_rejected(self):
        ds = self._dataset()
        small = SparseMatrix.from_dense(
            ds.modality_1.to_dense()[:100])
        with pytest.raises(ValueError, match="row-aligned"):
            train_joint_embedding(small, ds.modality_2_aligned(),
                                  ds.cell_type_labels, TrainProtocol())


class TestSplitCells:
    def test_sizes_and_disjointness(self):
        train, val = split_cells(100, 0.85, seed=0)
        assert len(train) == 85 and len(val) == 15
        assert len(np.intersect1d(train, val)) == 0
        assert len(np.union1d(train, val)) == 100

    def test_validation_never_empty(self):
        train, val = split_cells(3, 0.99, seed=0)
        assert len(val) >= 1

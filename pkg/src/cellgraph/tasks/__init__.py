"""Task heads: modality prediction, modality matching, joint embedding."""

from .common import (EpochRecord, TrainProtocol, run_training,
                     selector_matrix, split_cells, write_run_log)
from .embedding import (EmbedConfig, EmbedModel, JointEmbedding,
                        joint_embedding_loss, pca_concat_baseline,
                        register_embed_params, train_joint_embedding)
from .matching import (MatcherConfig, MatcherModel, MatchOutput,
                       competition_match_score, match_inference, match_scores,
                       matching_losses, reduce_modality, register_aux_params,
                       score_probabilities, train_matcher)
from .prediction import (PredictionModel, mean_predictor_rmse,
                         predict_from_matrix, rmse_loss, svd_linear_baseline,
                         train_prediction)

__all__ = [
    "EpochRecord", "TrainProtocol", "run_training", "selector_matrix",
    "split_cells", "write_run_log",
    "EmbedConfig", "EmbedModel", "JointEmbedding", "joint_embedding_loss",
    "pca_concat_baseline", "register_embed_params", "train_joint_embedding",
    "MatcherConfig", "MatcherModel", "MatchOutput", "competition_match_score",
    "match_inference", "match_scores", "matching_losses", "reduce_modality",
    "register_aux_params", "score_probabilities", "train_matcher",
    "PredictionModel", "mean_predictor_rmse", "predict_from_matrix",
    "rmse_loss", "svd_linear_baseline", "train_prediction",
]

"""Graph-pair matching network: joint embeddings, margin loss, training."""

from .config import GmnConfig, LOSS_AS_WRITTEN, LOSS_REINTERPRETED
from .gradcheck import gradient_check
from .network import cosine_similarity, embed_pair, pair_gradients, pair_loss
from .params import GmnParams
from .training import FINE_TUNE_EPOCHS, PairSample, TrainResult, fine_tune, sample_pairs, train

__all__ = [
    "GmnConfig",
    "GmnParams",
    "LOSS_AS_WRITTEN",
    "LOSS_REINTERPRETED",
    "PairSample",
    "TrainResult",
    "FINE_TUNE_EPOCHS",
    "cosine_similarity",
    "embed_pair",
    "fine_tune",
    "gradient_check",
    "pair_gradients",
    "pair_loss",
    "sample_pairs",
    "train",
]

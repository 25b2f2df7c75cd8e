from .bigcae import BiGCAE, BiGCAEConfig, GraphBatch, bigcae_loss
from .data import DESCRIPTORS, SP_DESCRIPTORS, TARGETS, Dataset, Standardizer, featurize, sp_descriptors
from .fusion import FusionConfig, FusionHead, blend, fusion_loss
from .phnn import PHNN, PHNNConfig, phnn_loss
from .spcvae import SPcVAE, SPcVAEConfig, masked_mae, spcvae_loss
from .training import EarlyStopping, History, TrainConfig, fit

__all__ = [
    "BiGCAE", "BiGCAEConfig", "DESCRIPTORS", "Dataset", "EarlyStopping", "FusionConfig",
    "FusionHead", "GraphBatch", "History", "PHNN", "PHNNConfig", "SPcVAE", "SPcVAEConfig",
    "SP_DESCRIPTORS", "Standardizer", "TARGETS", "TrainConfig", "bigcae_loss", "blend",
    "featurize", "fit", "fusion_loss", "masked_mae", "phnn_loss", "sp_descriptors", "spcvae_loss",
]

"""Baseline joint intent/slot parser."""
from .features import Embeddings, FeatureConfig, featurize, load_embeddings
from .model import JointModel, LabelNotInTrain, TrainConfig, predict_parse, train_joint_model

__all__ = [
    "Embeddings",
    "FeatureConfig",
    "JointModel",
    "LabelNotInTrain",
    "TrainConfig",
    "featurize",
    "load_embeddings",
    "predict_parse",
    "train_joint_model",
]

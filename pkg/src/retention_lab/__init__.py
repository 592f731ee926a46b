"""Gradient-boosted trees and exact tree SHAP for student-dropout modeling."""

from retention_lab.records import FEATURES, FeatureVector, StudentRecord, SynthConfig
from retention_lab.gbdt import Ensemble, TrainConfig, train
from retention_lab.metrics import EvalReport, evaluate
from retention_lab.shap import interaction_values, tree_shap

__all__ = [
    "FEATURES",
    "Ensemble",
    "EvalReport",
    "FeatureVector",
    "StudentRecord",
    "SynthConfig",
    "TrainConfig",
    "evaluate",
    "interaction_values",
    "train",
    "tree_shap",
]

__version__ = "0.1.0"

"""Edge features, scorers, the perturbed loss and the training loop."""
from .features import (FEATURE_NAMES, FeatureContext, Standardizer, correlation_filter,
                       edge_features)
from .fy import PerturbConfig, fy_gradient, fy_loss
from .models import ModelParams, predict_theta
from .policy import LearnedPolicy
from .training import TrainConfig, TrainResult, init_model, train

__all__ = [
    "FEATURE_NAMES", "FeatureContext", "LearnedPolicy", "ModelParams", "PerturbConfig",
    "Standardizer", "TrainConfig", "TrainResult", "correlation_filter", "edge_features",
    "fy_gradient", "fy_loss", "init_model", "predict_theta", "train",
]

"""Additive neural networks with main effects and pairwise interactions."""
__version__ = "0.1.0"

from .data import Dataset, FeatureMeta, Schema, fit_transform, load_csv, split, transform
from .interpret import global_explain, importance_ratios, local_explain
from .model import GamiNetModel, center_effects, load, predict, predict_mean, save
from .trainer import FitResult, TrainConfig, fit

"""Relational Rule Network: a three-layer differentiable model that learns
halfspace literals together with a crisp DNF over them."""
from .data import Dataset, Schema, flip_labels, gen_synthetic, load_csv, split
from .dnf import Dnf, Halfspace, PredefinedLiteral, decode, evaluate_dnf, metrics, render, simplify
from .errors import ConfigError, DataError, KinkError, R2NError, ShapeError, TrainingError
from .model import Checkpoint, ModelParams, model_forward
from .training import HyperParams, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ConfigError", "DataError", "Dataset", "Dnf", "Halfspace", "HyperParams",
    "KinkError", "ModelParams", "PredefinedLiteral", "R2NError", "Schema", "ShapeError",
    "TrainReport", "TrainingError", "decode", "evaluate_dnf", "flip_labels", "gen_synthetic",
    "load_csv", "metrics", "model_forward", "render", "simplify", "split", "train",
]

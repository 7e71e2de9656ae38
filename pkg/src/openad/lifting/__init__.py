"""2-D to 3-D box lifting: pseudo point clouds, the converter network,
training, and a synthetic scene generator."""

from .inputs import LiftingInput, PreparedObject, TrainingPair, lift_cloud, prepare_input
from .model import (ConverterConfig, ConverterModel, box_loss, decode, extract_grid_features,
                    extract_point_features, predict_box, predict_prepared)
from .synth import SynthConfig, SynthScene, synthesize_scene, synthesize_suite
from .train import center_recall, evaluate_decoders, pca_boxes, train_converter

__all__ = [
    "ConverterConfig", "ConverterModel", "LiftingInput", "PreparedObject", "SynthConfig", "SynthScene",
    "TrainingPair", "box_loss", "center_recall", "decode", "evaluate_decoders", "extract_grid_features",
    "extract_point_features", "lift_cloud", "pca_boxes", "predict_box", "predict_prepared", "prepare_input",
    "synthesize_scene", "synthesize_suite", "train_converter",
]

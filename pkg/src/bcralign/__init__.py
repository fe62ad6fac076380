"""Branching cascaded regression for face alignment under self-occlusion."""

from .cascade import BcrConfig, BcrModel, TrainingSet, fit, fit_many, init_from_box, train_bcr
from .modelfile import load_model, save_model
from .spdm import SpdmModel, build_spdm, params_from_shape, shape_from_params

__all__ = [
    "BcrConfig",
    "BcrModel",
    "SpdmModel",
    "TrainingSet",
    "build_spdm",
    "fit",
    "fit_many",
    "init_from_box",
    "load_model",
    "params_from_shape",
    "save_model",
    "shape_from_params",
    "train_bcr",
]

__version__ = "0.1.0"

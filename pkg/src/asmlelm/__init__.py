"""Sparse multinomial-logistic ELM classifiers for hyperspectral images."""

from .data_model import HsiCube, LabelGrid, SampleSet
from .pipeline import ClassifierSpec, TrainedModel, cross_validate, predict, train
from .solver import SolverConfig, admm_fit
from .wcf import WcfConfig

__all__ = [
    "ClassifierSpec",
    "HsiCube",
    "LabelGrid",
    "SampleSet",
    "SolverConfig",
    "TrainedModel",
    "WcfConfig",
    "admm_fit",
    "cross_validate",
    "predict",
    "train",
]

__version__ = "0.1.0"

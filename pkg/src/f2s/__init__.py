"""Functional-to-structural connectivity prediction via few-step adversarial denoising."""

__version__ = "0.1.0"

from .conndata import (
    Connectome,
    LabeledVolume,
    SubjectRecord,
    TimeSeriesPanel,
    parcellate,
    synth_dataset,
)
from .graphmetrics import MetricReport, metric_errors
from .netarch import Discriminator, Generator, ModelSpec
from .symdiffusion import NoiseSchedule, build_schedule, sample_connectome
from .tensorgrad import AdamState, Tensor, backward
from .trainer import TrainConfig, train

__all__ = [
    "AdamState",
    "Connectome",
    "Discriminator",
    "Generator",
    "LabeledVolume",
    "MetricReport",
    "ModelSpec",
    "NoiseSchedule",
    "SubjectRecord",
    "Tensor",
    "TimeSeriesPanel",
    "TrainConfig",
    "backward",
    "build_schedule",
    "metric_errors",
    "parcellate",
    "sample_connectome",
    "synth_dataset",
    "train",
]

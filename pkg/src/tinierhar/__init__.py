"""TinierHAR: lightweight human activity recognition models on a numpy autodiff engine."""

__version__ = "0.1.0"

from .costs import CostReport, cost_report, count_macs, count_params
from .data import WindowedDataset, load_csv, segment_windows, standardize, synth_dataset
from .metrics import MetricsReport, macro_f1
from .models import ModelSpec, ablate, build_model, default_spec
from .tensor import Tape, Tensor
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "CostReport",
    "MetricsReport",
    "ModelSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "WindowedDataset",
    "ablate",
    "build_model",
    "cost_report",
    "count_macs",
    "count_params",
    "default_spec",
    "load_checkpoint",
    "load_csv",
    "macro_f1",
    "save_checkpoint",
    "segment_windows",
    "standardize",
    "synth_dataset",
    "train",
]

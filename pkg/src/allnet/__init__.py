"""Hybrid three-backbone CNN for binary cell classification.

A small numpy/numba tensor engine (conv, pooling, dense, channel fusion) with
reverse-mode differentiation over an explicit DAG, plus the leakage-safe data
pipeline, training loop, and evaluation metrics that go with it.
"""

from .backend import active_backend
from .graph import GradCheckReport, Graph, GraphBuilder, backward, forward, grad_check
from .metrics import MetricsReport, render_report, report, roc_auc
from .models import AllNetConfig, build_allnet, toy_config
from .trainer import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    restore_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AllNetConfig",
    "GradCheckReport",
    "Graph",
    "GraphBuilder",
    "MetricsReport",
    "TrainConfig",
    "__version__",
    "active_backend",
    "backward",
    "build_allnet",
    "evaluate",
    "forward",
    "grad_check",
    "load_checkpoint",
    "render_report",
    "report",
    "restore_checkpoint",
    "roc_auc",
    "save_checkpoint",
    "toy_config",
    "train",
]

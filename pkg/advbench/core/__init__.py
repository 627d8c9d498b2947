"""
Core attack and benchmark functionality for advbench.

This module provides the numerical business logic:
- A small reverse-mode autodiff core for dense/convolutional networks
- The model catalog, training and the ADVW weight container
- FGSM-family attacks, AI-FGM and ensemble logit fusion
- MNIST ingestion and the benchmark harness
"""

from .attacks import ATTACKS, AttackConfig, Ensemble, run_attack
from .bench import EvalReport, ReportRow, SweepGrid, emit_report, parse_report
from .data import Dataset, LabeledImage, load_idx, load_mnist_dir, select_candidates
from .models import CATALOG, Model, ModelParams, ModelSpec, build, load, save

__all__ = [
    "ATTACKS",
    "AttackConfig",
    "Ensemble",
    "run_attack",
    "EvalReport",
    "ReportRow",
    "SweepGrid",
    "emit_report",
    "parse_report",
    "Dataset",
    "LabeledImage",
    "load_idx",
    "load_mnist_dir",
    "select_candidates",
    "CATALOG",
    "Model",
    "ModelParams",
    "ModelSpec",
    "build",
    "load",
    "save",
]

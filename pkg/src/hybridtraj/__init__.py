"""Hybrid discrete-continuous trajectory prediction.

Models traffic agents as a learned probabilistic hybrid automaton: a
recurrent decoder with a transition head over discrete maneuver modes, a
unit-variance Gaussian dynamics head over positions, and an adaptive
proposal head that steers sampling toward diverse, accurate futures.
Includes synthetic scenario generation, maneuver auto-labeling, training,
farthest-point sample selection, and an evaluation harness.
"""

__version__ = "0.1.0"

from .labeling import LabelThresholds, SmootherConfig, auto_label, perturb_labels, smooth_trajectory
from .model import PhaModel, load_checkpoint, rollout, save_checkpoint, sequence_log_likelihood
from .selection import SampleSet, SelectionResult, generate_samples, select
from .synthetic import generate_synthetic
from .training import LossBreakdown, coverage_loss, regularization_loss, total_loss, train
from .types import HybridSequence, HybridState, Mode, ModelConfig, SceneRecord, validate_record

__all__ = [
    "HybridSequence",
    "HybridState",
    "LabelThresholds",
    "LossBreakdown",
    "Mode",
    "ModelConfig",
    "PhaModel",
    "SampleSet",
    "SceneRecord",
    "SelectionResult",
    "SmootherConfig",
    "auto_label",
    "coverage_loss",
    "generate_samples",
    "generate_synthetic",
    "load_checkpoint",
    "perturb_labels",
    "regularization_loss",
    "rollout",
    "save_checkpoint",
    "select",
    "sequence_log_likelihood",
    "smooth_trajectory",
    "total_loss",
    "train",
    "validate_record",
]

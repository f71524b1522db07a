"""advtrace: separate-and-trace toolkit for adversarial-example provenance.

Builds tracer-separated copies of a classifier, attacks them with hard-label
black-box attacks, and traces which copy an adversarial example came from.
"""

from ._kernels import BACKEND
from .datax import Dataset, NoiseSpec, add_noise, gen_blobs, gen_rings, tracer_subset
from .netcore import DenseNet, adam_step, cross_entropy_grad, forward
from .separation import (HardLabelOracle, ParallelModel, Tracer,
                         combined_logits, noise_sensitive_loss,
                         normalize_logits, train_classifier, train_tracer)
from .tracing import (dol, estimate_multicopy_accuracy, trace_source,
                      tracing_accuracy, transferability_report)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "NoiseSpec", "DenseNet", "HardLabelOracle",
    "ParallelModel", "Tracer", "add_noise", "adam_step", "combined_logits",
    "cross_entropy_grad", "dol", "estimate_multicopy_accuracy", "forward",
    "gen_blobs", "gen_rings", "noise_sensitive_loss", "normalize_logits",
    "trace_source", "tracer_subset", "tracing_accuracy", "train_classifier",
    "train_tracer", "transferability_report",
]

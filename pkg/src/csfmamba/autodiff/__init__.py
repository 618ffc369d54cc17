"""Minimal numpy reverse-mode autodiff used by the network."""

from . import ops
from .gradcheck import GradCheckReport, NonDeterministicFunction, finite_diff_check
from .optim import AdamState, adam_step
from .params import ParamStore, uniform_fan_in
from .tensor import (Tape, Tensor, as_tensor, backward, get_dtype, get_precision, no_record,
                     precision, primitive, recording, set_precision)

__all__ = [
    "ops", "Tape", "Tensor", "as_tensor", "backward", "get_dtype", "get_precision", "no_record",
    "precision", "primitive", "recording", "set_precision", "ParamStore", "uniform_fan_in",
    "AdamState", "adam_step", "GradCheckReport", "NonDeterministicFunction", "finite_diff_check",
]

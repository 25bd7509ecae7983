"""Desk-scale, trainable RGB-thermal fusion segmentation with condition-gated
sparse expert routing, soft-gated attention, and a self-calibrated decoder."""

from .tensor import (  # noqa: F401
    Parameter,
    Tape,
    Tensor,
    backward,
    no_grad,
    reset_tape,
    set_default_dtype,
    using_dtype,
)

from fchc.diffcore.tensor import Tape, Tensor, active_tape, is_debug, parameter, set_debug
from fchc.diffcore.grad_check import grad_check

__all__ = ["Tape", "Tensor", "active_tape", "is_debug", "parameter", "set_debug", "grad_check"]

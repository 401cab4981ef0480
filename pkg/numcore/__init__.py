from numcore.tensor import (
    Tensor,
    Tape,
    apply_op,
    as_tensor,
    backward,
    current_tape,
    dump_csv,
    is_grad_enabled,
    no_grad,
    reset_tape,
)
from numcore import functional
from numcore.nn import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, Parameter
from numcore.optim import AdamW, OptimState, ScheduleConfig, adamw_step, lr_at
from numcore.gradcheck import GradCheckReport, grad_check

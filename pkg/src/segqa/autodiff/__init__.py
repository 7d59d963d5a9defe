"""Minimal reverse-mode differentiation for the model and its training."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .losses import cosine_similarity, cosine_similarity_loss, cross_entropy, l1, mse, smooth_l1
from .optim import Adadelta, AdamW, CosineSchedule, Optimizer, cosine_lr
from .tensor import (
    Tensor,
    batch_norm,
    concat,
    conv3d,
    conv_transpose3d,
    dropout,
    exp,
    flatten,
    gather_rows,
    get_default_dtype,
    is_grad_enabled,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    no_grad,
    precision,
    relu,
    scatter_add_rows,
    set_default_dtype,
    softmax,
    tanh,
    tensor,
)

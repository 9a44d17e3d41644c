"""Numerical core: tensors, reverse-mode autograd, layers, Adam."""

from .functional import (
    batchnorm_forward,
    conv1d_forward,
    conv2d_forward,
    cross_entropy_loss,
    dropout_apply,
    linear_forward,
    lstm_forward,
    softmax,
)
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .modules import LSTM, BatchNorm, Conv1d, Conv2d, Dropout, Linear, Module, Parameter, Tanh
from .optim import Adam, OptimizerState, adam_step
from .serialize import load_weights, save_weights
from .tensor import Tensor, backward, no_grad

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv1d",
    "Conv2d",
    "Dropout",
    "LSTM",
    "Linear",
    "Module",
    "OptimizerState",
    "Parameter",
    "Tanh",
    "Tensor",
    "adam_step",
    "backward",
    "batchnorm_forward",
    "check_gradients",
    "conv1d_forward",
    "conv2d_forward",
    "cross_entropy_loss",
    "dropout_apply",
    "linear_forward",
    "load_weights",
    "lstm_forward",
    "no_grad",
    "numerical_gradient",
    "relative_error",
    "save_weights",
    "softmax",
]

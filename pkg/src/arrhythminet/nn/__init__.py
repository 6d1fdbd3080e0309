from .functional import (
    BatchNormParams,
    ConvParams,
    DenseParams,
    batchnorm1d,
    conv1d_backward,
    conv1d_forward,
    conv_output_length,
    dense_softmax_ce,
    global_avg_pool,
    relu,
    softmax,
)
from .layers import BatchNorm1d, Conv1d, Dense, GlobalAvgPool, Layer, ReLU, Residual, Sequential
from .optim import SGD, Adam, OptimizerConfig, make_optimizer, optimizer_step
from .tensor import Tensor

__all__ = [
    "Adam",
    "BatchNorm1d",
    "BatchNormParams",
    "Conv1d",
    "ConvParams",
    "Dense",
    "DenseParams",
    "GlobalAvgPool",
    "Layer",
    "OptimizerConfig",
    "ReLU",
    "Residual",
    "SGD",
    "Sequential",
    "Tensor",
    "batchnorm1d",
    "conv1d_backward",
    "conv1d_forward",
    "conv_output_length",
    "dense_softmax_ce",
    "global_avg_pool",
    "make_optimizer",
    "optimizer_step",
    "relu",
    "softmax",
]

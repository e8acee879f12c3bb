"""Minimal float64 tensor kernel: taped autodiff, NN ops, AdamW, checkpoints."""
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat,
    conv1d,
    crop_length,
    edge_pad_right,
    embedding_lookup,
    group_norm,
    linear,
    matmul,
    mean,
    mean_squared_error,
    mul,
    reshape,
    silu,
    sinusoidal_embedding,
    softmax,
    sub,
    transpose,
    upsample_nearest_2x,
)
from .nn import Conv1d, Embedding, GroupNorm, Linear, Module, resolve_groups
from .optim import AdamW
from .checkpoint import load_arrays, save_arrays

__all__ = [
    "AdamW",
    "Conv1d",
    "Embedding",
    "GroupNorm",
    "Linear",
    "Module",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "concat",
    "conv1d",
    "crop_length",
    "edge_pad_right",
    "embedding_lookup",
    "group_norm",
    "linear",
    "load_arrays",
    "matmul",
    "mean",
    "mean_squared_error",
    "mul",
    "reshape",
    "resolve_groups",
    "save_arrays",
    "silu",
    "sinusoidal_embedding",
    "softmax",
    "sub",
    "transpose",
    "upsample_nearest_2x",
]

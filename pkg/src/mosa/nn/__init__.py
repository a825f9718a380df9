"""Minimal numpy kernels with explicit forward/backward passes."""

from .attention import MultiHeadAttention, multi_head_attention
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .core import BackwardError, Module, Parameter, ParameterSet, ShapeError
from .layers import MLP, FeedForward, LayerNorm, Linear, linear_forward, relu, sigmoid, softmax_rows
from .optim import SGD, Adam, make_optimizer, sgd_step
from .transformer import (
    DecoderLayer,
    EncoderLayer,
    TransformerDecoder,
    TransformerEncoder,
    sinusoidal_positions,
    transformer_decoder,
    transformer_encoder,
)

__all__ = [
    "Adam",
    "BackwardError",
    "CheckpointError",
    "DecoderLayer",
    "EncoderLayer",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "ParameterSet",
    "SGD",
    "ShapeError",
    "TransformerDecoder",
    "TransformerEncoder",
    "linear_forward",
    "load_checkpoint",
    "make_optimizer",
    "multi_head_attention",
    "relu",
    "save_checkpoint",
    "sgd_step",
    "sigmoid",
    "sinusoidal_positions",
    "softmax_rows",
    "transformer_decoder",
    "transformer_encoder",
]

"""Small numpy neural-network kernel with hand-written backward passes."""

from .layers import (
    affine_backward,
    affine_forward,
    avgpool2_backward,
    avgpool2_forward,
    conv2d_backward,
    conv2d_forward,
    gaussian_kl,
    gcn_backward,
    gcn_forward,
    gru_backward,
    gru_forward,
    mse_loss,
    normalized_adjacency,
    relu_backward,
    relu_forward,
    reparameterize,
    reparameterize_backward,
    self_attention_backward,
    self_attention_forward,
    sigmoid,
    softmax,
    upsample2_backward,
    upsample2_forward,
)
from .optim import NonFiniteGradient, adam_step
from .params import Param, ParamStore, glorot_uniform

__all__ = [
    "Param",
    "ParamStore",
    "NonFiniteGradient",
    "adam_step",
    "glorot_uniform",
    "affine_backward",
    "affine_forward",
    "avgpool2_backward",
    "avgpool2_forward",
    "conv2d_backward",
    "conv2d_forward",
    "gaussian_kl",
    "gcn_backward",
    "gcn_forward",
    "gru_backward",
    "gru_forward",
    "mse_loss",
    "normalized_adjacency",
    "relu_backward",
    "relu_forward",
    "reparameterize",
    "reparameterize_backward",
    "self_attention_backward",
    "self_attention_forward",
    "sigmoid",
    "softmax",
    "upsample2_backward",
    "upsample2_forward",
]

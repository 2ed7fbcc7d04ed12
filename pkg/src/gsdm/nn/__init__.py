from .tensor import Tensor, no_grad, precision, set_default_dtype, default_dtype
from .attention import packed_attention, dense_masked_attention, op_counter, count_ops, use_backend, current_backend, set_backend
from .layers import linear, layernorm, residual_block, sinusoidal_encoding, timestep_embedding
from .optim import ParameterStore, Adam, clip_global_norm, grad_check

__all__ = [
    "Tensor", "no_grad", "precision", "set_default_dtype", "default_dtype",
    "packed_attention", "dense_masked_attention", "op_counter", "count_ops",
    "use_backend", "current_backend", "set_backend",
    "linear", "layernorm", "residual_block", "sinusoidal_encoding", "timestep_embedding",
    "ParameterStore", "Adam", "clip_global_norm", "grad_check",
]

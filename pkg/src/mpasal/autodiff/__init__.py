"""Minimal dense-tensor library with reverse-mode differentiation."""
from . import ops
from .gradcheck import GradcheckResult, check_gradients, numerical_gradient
from .module import Module, Parameter
from .msat import MSATError, load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .optim import SGD, Adam, clip_gradients, global_grad_norm
from .tensor import Tensor, backward, default_dtype, precision

__all__ = [
    "Adam", "GradcheckResult", "MSATError", "Module", "Parameter", "SGD", "Tensor",
    "backward", "check_gradients", "clip_gradients", "default_dtype", "global_grad_norm",
    "load_checkpoint", "load_tensor", "numerical_gradient", "ops", "precision",
    "save_checkpoint", "save_tensor",
]

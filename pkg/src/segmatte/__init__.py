"""Promptable segmentation + matting reference model with verified numerics."""

__version__ = "0.1.0"

from .tensor import Parameter, Tensor, no_grad

__all__ = ["Tensor", "Parameter", "no_grad", "__version__"]

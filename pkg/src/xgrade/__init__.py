"""Desk-scale chest X-ray grading stack.

A from-scratch, gradient-checkable deep-learning library and CLI: numpy-backed
autograd tensors, residual-inception blocks with partial attention, weighted
multi-label training, an online augmentation pipeline, ROC/AUC evaluation and
occlusion heatmaps.
"""

from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]

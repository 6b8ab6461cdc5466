"""Cross-modal self-supervised learning for synchronized video and speech.

The package is a self-contained desk-scale stack: a numpy-backed autodiff
core, audio front end, synthetic correlated scan generator, hard pair
sampling, two-stream encoders with contrastive / pair / frame-order
losses, an affinity-aware curriculum trainer, and transfer evaluation for
frame classification and gaze saliency.
"""

from .tensor import Tensor, ShapeMismatch, grad_check, no_grad
from .optim import ParamStore, sgd_update, lr_at_epoch
from .records import read_tensor_records, write_tensor_records, RecordFormatError

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "grad_check",
    "no_grad",
    "ParamStore",
    "sgd_update",
    "lr_at_epoch",
    "read_tensor_records",
    "write_tensor_records",
    "RecordFormatError",
]

__version__ = "0.1.0"

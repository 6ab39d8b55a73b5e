"""compactnet: sparsification, mixed-precision quantization, soft weight sharing
and adaptive optimizers on a small numpy autodiff engine."""

from .autodiff import Tape, Tensor, backward, value_and_grad
from .nn import Dense, DenseNet

__all__ = ["Tape", "Tensor", "backward", "value_and_grad", "Dense", "DenseNet"]
__version__ = "0.1.0"

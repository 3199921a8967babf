"""Hyperspectral unmixing toolkit.

A from-scratch reverse-mode autodiff engine with second-order support, the
unmixing networks built on it (spectral encoder, mixture-based abundance
head, uncertainty-aware decoder, patch critic), an adversarially
regularized training loop, a synthetic scene generator, simple binary file
formats, and an evaluation harness with a fully constrained least squares
baseline.
"""

from .autodiff import (
    ParamSet,
    Tensor,
    backward,
    grad_of,
    input_gradient_norm,
    no_grad,
    register_op,
)
from .errors import (
    ConfigError,
    DataError,
    GraphError,
    HsunmixError,
    NotTwiceDifferentiableError,
    NumericalError,
    ShapeError,
)

__version__ = "0.1.0"

"""Cross-modal token alignment and selective-scan fusion, at desk scale.

A numpy-backed library with four layers: a reverse-mode autodiff core
(:mod:`~alignscan.numcore`), relaxed optimal-transport and MMD alignment
(:mod:`~alignscan.alignment`), an interleaved selective-scan fusion model
(:mod:`~alignscan.fusion`), and the surrounding data, metrics and benchmark
machinery (:mod:`~alignscan.data_io`, :mod:`~alignscan.metrics`,
:mod:`~alignscan.bench`). The ``alignscan`` command line wires them together.
"""

from .errors import (
    BudgetError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    NumericError,
    ParameterError,
    TrainingError,
)
from .numcore import Var, elementwise, grad_check, make_rng, matmul

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "ParameterError",
    "TrainingError",
    "Var",
    "elementwise",
    "grad_check",
    "make_rng",
    "matmul",
    "__version__",
]

"""Stroke-based generative modeling of handwritten characters.

The package fits minimal cubic B-splines to pen trajectories, renders
them onto small grayscale canvases, and trains three generative models
of character drawings with mixture-density outputs on a from-scratch
reverse-mode autodiff engine.  Evaluation covers held-out likelihoods,
paired significance tests, and embedding-based sample inspection.
"""

__version__ = "0.1.0"

from . import autodiff, data, evaluation, mdn, models, render, splines, training
from .errors import GlyphgenError
from .estimators import (
    BaselineLSTMGenerator,
    FullNeuroSymbolicGenerator,
    HierarchicalLSTMGenerator,
    SplinePreprocessor,
)

__all__ = [
    "autodiff",
    "data",
    "evaluation",
    "mdn",
    "models",
    "render",
    "splines",
    "training",
    "GlyphgenError",
    "SplinePreprocessor",
    "FullNeuroSymbolicGenerator",
    "HierarchicalLSTMGenerator",
    "BaselineLSTMGenerator",
    "__version__",
]

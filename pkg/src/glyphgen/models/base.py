"""Shared scaffolding for the generative models.

All three architectures expose the same surface: a differentiable
per-drawing negative log-likelihood (``nll``), a float convenience wrapper
(``score_drawing``), and ancestral sampling (``generate``).  Coordinates
are normalized by the 105-unit source frame before they touch any head,
so mixture densities live on a roughly unit scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParameterStore, Tensor
from ..errors import DegenerateStrokeError, EmptyDrawingError
from ..render import SOURCE_SIZE, Canvas
from ..splines import SplineDrawing, SplineStroke
from .config import ModelConfig

COORD_SCALE = float(SOURCE_SIZE)


@dataclass
class StrokeStep:
    """Teacher-forcing view of one stroke: absolute start, offsets, end flag."""

    y: np.ndarray
    x: np.ndarray
    terminal: bool


def drawing_to_steps(drawing: SplineDrawing) -> list[StrokeStep]:
    if len(drawing) == 0:
        raise EmptyDrawingError("cannot score an empty drawing")
    steps = []
    for i, stroke in enumerate(drawing):
        if len(stroke.offsets) == 0:
            raise DegenerateStrokeError(f"stroke {i} has no offsets")
        steps.append(StrokeStep(y=stroke.start, x=stroke.offsets, terminal=i == len(drawing) - 1))
    return steps


def split_offset_head(raw: Tensor, k: int) -> tuple[Tensor, Tensor]:
    """Split a (1, 6K+1) stroke-head row into mixture raw block and end logit."""
    return raw[:, : 6 * k], ad.reshape(raw[:, 6 * k :], ())


def sigmoid_value(logit: float) -> float:
    logit = float(np.clip(logit, -500.0, 500.0))
    return 1.0 / (1.0 + np.exp(-logit))


class GenerativeModel:
    """Base class: owns the parameter store, mode flag, and dropout stream."""

    kind: str = "?"

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParameterStore()
        self.training = False
        self.seed = int(seed)
        # separate stream so weight init and dropout masks never interleave
        self.dropout_rng = np.random.default_rng([int(seed), 0xD0])

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"

    def train(self) -> "GenerativeModel":
        self.training = True
        return self

    def eval(self) -> "GenerativeModel":
        self.training = False
        return self

    def nll(self, drawing: SplineDrawing) -> Tensor:
        raise NotImplementedError

    def generate(self, rng: np.random.Generator, temperature: float = 1.0) -> tuple[SplineDrawing, Canvas]:
        raise NotImplementedError

    def score_drawing(self, drawing: SplineDrawing) -> float:
        """Deterministic per-drawing negative log-likelihood in nats."""
        was_training = self.training
        self.training = False
        try:
            with ad.no_grad():
                return float(self.nll(drawing).data)
        finally:
            self.training = was_training

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.trainable())

"""Flat sequence model over pen actions.

A drawing becomes one long sequence of (offset, pen state) pairs: pen
state 0 continues the current stroke, 1 closes it, 2 ends the drawing.
Each stroke segment opens with a travel element whose offset runs from
the previous stroke's last control point (the origin for the first
stroke) to the new start.  A stacked LSTM with zero initial state reads
the sequence and two heads emit a 3-way pen-state categorical and an
offset mixture per step.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import mdn
from ..autodiff import Dense, LSTMStack, Tensor
from ..render import Canvas, render_drawing
from ..splines import SplineDrawing, SplineStroke
from .base import COORD_SCALE, GenerativeModel, drawing_to_steps, StrokeStep
from .config import ModelConfig

PEN_EYE = np.eye(3)


def encode_drawing(steps: list[StrokeStep]) -> list[tuple[np.ndarray, int]]:
    """Flatten strokes into (offset, pen state) elements in source units."""
    seq: list[tuple[np.ndarray, int]] = []
    pen = np.zeros(2)
    for i, step in enumerate(steps):
        seq.append((step.y - pen, 0))
        last = len(step.x) - 1
        for j, delta in enumerate(step.x):
            if j < last:
                state = 0
            else:
                state = 2 if step.terminal else 1
            seq.append((np.array(delta, dtype=np.float64), state))
        pen = step.y + step.x.sum(axis=0)
    return seq


def decode_sequence(seq: list[tuple[np.ndarray, int]]) -> SplineDrawing:
    """Inverse of ``encode_drawing``; strokes left without offsets (a travel
    element immediately followed by a break) are dropped."""
    strokes: SplineDrawing = []
    pen = np.zeros(2)
    start: np.ndarray | None = None
    offsets: list[np.ndarray] = []
    for delta, state in seq:
        if start is None:
            start = pen + delta
            pen = start
        else:
            offsets.append(np.array(delta, dtype=np.float64))
            pen = pen + delta
        if state in (1, 2):
            if offsets:
                strokes.append(SplineStroke(start=start, offsets=np.array(offsets)))
            start, offsets = None, []
            if state == 2:
                break
    return strokes


class BaselineLSTM(GenerativeModel):
    kind = "baseline"

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng([self.seed, 0x03])
        store, k, u = self.params, config.mixture_components, config.lstm_units
        # input = [offset (2) | pen state one-hot (3)]
        self.lstm = LSTMStack(store, "lstm", 5, u, config.lstm_layers, rng)
        self.start_embed = store.add("start_embed", rng.normal(0.0, 0.1, 5))
        self.pen_head = Dense(store, "pen_head", u, 3, "none", rng)
        self.offset_head = Dense(store, "offset_head", u, 6 * k, "none", rng)

    def _input_for(self, prev: tuple[np.ndarray, int] | None) -> Tensor:
        if prev is None:
            return ad.reshape(self.start_embed.tensor, (1, 5))
        delta, state = prev
        return Tensor(np.concatenate([delta / COORD_SCALE, PEN_EYE[state]]).reshape(1, 5))

    def nll(self, drawing: SplineDrawing) -> Tensor:
        seq = encode_drawing(drawing_to_steps(drawing))
        states = self.lstm.initial_state(1)  # zero hidden and cell state
        total = Tensor(0.0)
        prev: tuple[np.ndarray, int] | None = None
        for delta, state in seq:
            h, states = self.lstm.step(self._input_for(prev), states)
            h = ad.dropout(h, self.config.dropout, self.mode, self.dropout_rng)
            total = total + mdn.categorical3_log_prob(ad.reshape(self.pen_head(h), (3,)), state)
            total = total + mdn.gmm_log_prob(mdn.gmm_from_raw(self.offset_head(h)), delta / COORD_SCALE)
            prev = (delta, state)
        return ad.neg(total)

    def generate(self, rng: np.random.Generator, temperature: float = 1.0) -> tuple[SplineDrawing, Canvas]:
        """Draw order per element is fixed: pen state, then offset.  Caps
        force a stroke break at the offset limit and the end state at the
        stroke limit."""
        was_training, self.training = self.training, False
        try:
            with ad.no_grad():
                seq = self._generate(rng, temperature)
        finally:
            self.training = was_training
        strokes = decode_sequence(seq)
        return strokes, render_drawing(strokes)

    def _generate(self, rng: np.random.Generator, temperature: float) -> list[tuple[np.ndarray, int]]:
        seq: list[tuple[np.ndarray, int]] = []
        states = self.lstm.initial_state(1)
        prev: tuple[np.ndarray, int] | None = None
        strokes_done = 0
        offsets_in_stroke = -1  # -1 marks "next element is a travel move"
        while True:
            h, states = self.lstm.step(self._input_for(prev), states)
            logits = self.pen_head(h).data.reshape(3)
            state = mdn.categorical_sample(logits, temperature, rng)
            delta = mdn.gmm_sample(mdn.gmm_from_raw(self.offset_head(h)), temperature, rng) * COORD_SCALE
            if offsets_in_stroke >= self.config.max_offsets_per_stroke - 1 and state == 0:
                state = 1
            if state in (1, 2):
                strokes_done += 1
                if strokes_done >= self.config.max_strokes:
                    state = 2
            seq.append((delta, state))
            prev = (delta, state)
            if state == 2:
                break
            offsets_in_stroke = -1 if state == 1 else offsets_in_stroke + 1
        return seq
